//! Judge calls that render a shipped prompt, consult the cache, and parse.

use crate::bertscore::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::reward::StructureVerdict;

use super::cache::JudgeCache;
use super::client::ServiceClient;
use super::parse::{parse_dataman, parse_operations, parse_structure_verdict, DataManScore, Operation};
use super::templates::{render, TemplateName, ORGANIC_TEXT, RECYCLED_TEXT, TEXT};
use super::wire::ServiceKind;

/// Raw judge reply for a rendered prompt, from the cache when possible.
/// Replies are cached only after they parse.
fn ask<T>(
    client: &ServiceClient,
    cache: Option<&JudgeCache>,
    template: TemplateName,
    prompt: String,
    parse: impl Fn(&str) -> Result<T>,
) -> Result<T> {
    if let Some(hit) = cache.and_then(|c| c.get(template, &prompt)) {
        return parse(&hit);
    }
    let reply = client.complete(prompt.clone())?;
    let value = parse(&reply)?;
    if let Some(c) = cache {
        c.insert(template, &prompt, reply);
    }
    Ok(value)
}

pub fn score_dataman(client: &ServiceClient, cache: Option<&JudgeCache>, text: &str) -> Result<DataManScore> {
    client.expect_kind(ServiceKind::ScoreDataman)?;
    let prompt = render(TemplateName::Dataman, &[(TEXT, text)])?;
    ask(client, cache, TemplateName::Dataman, prompt, parse_dataman)
}

pub fn judge_structure(
    client: &ServiceClient,
    cache: Option<&JudgeCache>,
    organic: &str,
    recycled: &str,
) -> Result<StructureVerdict> {
    client.expect_kind(ServiceKind::JudgeStructure)?;
    let prompt = render(TemplateName::Structure, &[(ORGANIC_TEXT, organic), (RECYCLED_TEXT, recycled)])?;
    ask(client, cache, TemplateName::Structure, prompt, parse_structure_verdict)
}

/// Free-text structure label, e.g. "Markdown".
pub fn classify_structure(client: &ServiceClient, cache: Option<&JudgeCache>, text: &str) -> Result<String> {
    client.expect_kind(ServiceKind::Classify)?;
    let prompt = render(TemplateName::StructureClass, &[(TEXT, text)])?;
    ask(client, cache, TemplateName::StructureClass, prompt, |reply| {
        let label = reply.trim();
        if label.is_empty() {
            return Err(Error::Judge {
                message: "empty structure label".into(),
                raw: reply.to_string(),
            });
        }
        Ok(label.to_string())
    })
}

pub fn extract_operations(
    client: &ServiceClient,
    cache: Option<&JudgeCache>,
    organic: &str,
    recycled: &str,
) -> Result<Vec<Operation>> {
    client.expect_kind(ServiceKind::Classify)?;
    let prompt = render(TemplateName::OperationClass, &[(ORGANIC_TEXT, organic), (RECYCLED_TEXT, recycled)])?;
    ask(client, cache, TemplateName::OperationClass, prompt, parse_operations)
}

/// Embedding provider backed by an `embed` endpoint. The prompt is the
/// tokens joined by single spaces; the reply carries one vector per token.
pub struct ServiceEmbedder<'a> {
    client: &'a ServiceClient,
}

impl<'a> ServiceEmbedder<'a> {
    pub fn new(client: &'a ServiceClient) -> Result<Self> {
        client.expect_kind(ServiceKind::Embed)?;
        Ok(ServiceEmbedder { client })
    }
}

impl EmbeddingProvider for ServiceEmbedder<'_> {
    fn embed_tokens(&self, tokens: &[&str]) -> Result<Vec<Vec<f64>>> {
        let response = self.client.request(tokens.join(" "))?;
        let vectors = response
            .vectors
            .ok_or_else(|| Error::Service("embed response has no `vectors`".into()))?;
        if vectors.len() != tokens.len() {
            return Err(Error::Service(format!(
                "embed response has {} vectors for {} tokens",
                vectors.len(),
                tokens.len()
            )));
        }
        Ok(vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bertscore::{text_similarity, HashEmbedder};
    use crate::clients::wire::ServiceEndpoint;

    fn client(kind: ServiceKind) -> ServiceClient {
        ServiceClient::connect(ServiceEndpoint::builtin(kind, "")).unwrap()
    }

    #[test]
    fn dataman_through_cache() {
        let c = client(ServiceKind::ScoreDataman);
        let cache = JudgeCache::new();
        assert_eq!(score_dataman(&c, Some(&cache), "One. Two.").unwrap().overall, 3);
        assert_eq!(cache.len(), 1);
        assert_eq!(score_dataman(&c, Some(&cache), "One. Two.").unwrap().overall, 3);
        assert_eq!(cache.len(), 1);
        assert!(score_dataman(&client(ServiceKind::Embed), None, "x").is_err());
    }

    #[test]
    fn service_embedder_matches_local_hash() {
        let c = client(ServiceKind::Embed);
        let remote = ServiceEmbedder::new(&c).unwrap();
        let a = text_similarity("the cat sat", "a cat sat down", &remote).unwrap();
        let b = text_similarity("the cat sat", "a cat sat down", &HashEmbedder::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn structure_and_operations() {
        let v = judge_structure(&client(ServiceKind::JudgeStructure), None, "a b", "c d").unwrap();
        assert_eq!(v, StructureVerdict::Preserved);
        let ops = extract_operations(&client(ServiceKind::Classify), None, "a", "b").unwrap();
        assert_eq!(ops[0].verb, "paraphrasing");
        assert_eq!(classify_structure(&client(ServiceKind::Classify), None, "plain words").unwrap(), "Plain Text");
    }
}
