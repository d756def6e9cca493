use serde_json::Value;

use crate::corpus::{Document, FailureRecord, Pool, TokenCounter};
use crate::error::{Error, Result};

use super::chunk::{chunk, REASSEMBLY_SEPARATOR};
use super::client::ServiceClient;
use super::parse::parse_rephrase;
use super::templates::{render, TemplateName, ORGANIC_TEXT};
use super::wire::ServiceKind;

pub const RECYCLED_SUFFIX: &str = "#rec";
pub const RECYCLED_SOURCE: &str = "recycled";

pub fn recycled_id(organic_id: &str) -> String {
    format!("{organic_id}{RECYCLED_SUFFIX}")
}

/// Rephrases one document chunk by chunk and joins the results in order.
pub fn rephrase_document(
    doc: &Document,
    client: &ServiceClient,
    counter: TokenCounter,
    chunk_tokens: u64,
) -> Result<Document> {
    client.expect_kind(ServiceKind::Rephrase)?;
    let chunks = chunk(&doc.text, counter, chunk_tokens);
    if chunks.iter().all(|c| c.body.trim().is_empty()) {
        return Err(Error::Degenerate(format!("document `{}` has no text to rephrase", doc.id)));
    }
    let parts = client.map_bounded(&chunks, |c| {
        let prompt = render(TemplateName::Repro, &[(ORGANIC_TEXT, c.body.as_str())])?;
        let reply = client.complete(prompt)?;
        let parsed = parse_rephrase(&reply)?;
        if parsed.marker_missing {
            log::warn!("rephrase of `{}` lacks the expected lead-in; using the whole reply", doc.id);
        }
        Ok::<_, Error>(parsed.text)
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let mut out = Document::new(recycled_id(&doc.id), parts.join(REASSEMBLY_SEPARATOR), counter)
        .with_source(RECYCLED_SOURCE);
    out.extra = doc.extra.clone();
    out.extra.insert("organic_id".into(), Value::String(doc.id.clone()));
    Ok(out)
}

/// Rephrases every document of `pool`. Documents that fail after retries are
/// left out and listed in the manifest's failures.
pub fn recycle_pool(pool: &Pool, client: &ServiceClient, chunk_tokens: u64) -> Result<Pool> {
    client.expect_kind(ServiceKind::Rephrase)?;
    let counter = pool.counter();
    let results = client.map_bounded(pool.documents(), |d| rephrase_document(d, client, counter, chunk_tokens));
    let mut docs = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (doc, r) in pool.documents().iter().zip(results) {
        match r {
            Ok(d) => docs.push(d),
            Err(e) => {
                log::warn!("could not rephrase `{}`: {e}", doc.id);
                failures.push(FailureRecord {
                    doc_id: doc.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    let mut out = pool.derive(docs, &format!("{}-rec", pool.manifest().source_label));
    out.manifest_mut().failures = failures;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::wire::{ServiceEndpoint, TransportKind};

    fn builtin(mode: &str) -> ServiceClient {
        ServiceClient::connect(ServiceEndpoint::builtin(ServiceKind::Rephrase, mode)).unwrap()
    }

    #[test]
    fn identity_keeps_text_and_suffixes_id() {
        let doc = Document::new("d1", "Some text here.", TokenCounter::WhitespaceWords);
        let out = rephrase_document(&doc, &builtin("identity"), TokenCounter::WhitespaceWords, 2048).unwrap();
        assert_eq!(out.id, "d1#rec");
        assert_eq!(out.text, doc.text);
        assert_eq!(out.source.as_deref(), Some("recycled"));
        assert_eq!(out.extra["organic_id"], "d1");
    }

    #[test]
    fn chunks_are_rephrased_in_order() {
        let text = "alpha beta gamma.\n\ndelta epsilon zeta.";
        let doc = Document::new("d", text, TokenCounter::WhitespaceWords);
        let out = rephrase_document(&doc, &builtin("uppercase"), TokenCounter::WhitespaceWords, 3).unwrap();
        assert_eq!(out.text, "ALPHA BETA GAMMA.\nDELTA EPSILON ZETA.");
        assert_eq!(out.token_count, 6);
    }

    #[test]
    fn failures_are_recorded_and_the_run_completes() {
        let pool = Pool::from_documents(
            vec![
                Document::new("a", "fine text", TokenCounter::WhitespaceWords),
                Document::new("b", "  ", TokenCounter::WhitespaceWords),
            ],
            "org-hq",
            TokenCounter::WhitespaceWords,
        )
        .unwrap();
        let out = recycle_pool(&pool, &builtin(""), 2048).unwrap();
        assert_eq!(out.ids().collect::<Vec<_>>(), vec!["a#rec"]);
        assert_eq!(out.manifest().failures.len(), 1);
        assert_eq!(out.manifest().failures[0].doc_id, "b");
        assert_eq!(out.manifest().created_from[0].source_label, "org-hq");

        let mut down = ServiceEndpoint::new(ServiceKind::Rephrase, TransportKind::StdioLines, "exit 1");
        down.backoff_ms = 1;
        down.timeout_ms = 2000;
        let client = ServiceClient::connect(down).unwrap();
        let out = recycle_pool(&pool, &client, 2048).unwrap();
        assert!(out.is_empty());
        assert_eq!(out.manifest().failures.len(), 2);
    }
}
