//! Clients for external model services: prompt templates, wire schema,
//! transports, response parsers and document chunking.

mod builtin;
mod cache;
mod chunk;
mod client;
mod judges;
mod parse;
mod rephrase;
mod templates;
mod transport;
mod wire;

pub use builtin::{density_class, rule_dataman_score, sentence_count, Builtin, RephraseMode};
pub use cache::{prompt_digest, CacheRecord, JudgeCache};
pub use chunk::{chunk, reassemble, Chunk, DEFAULT_MAX_TOKENS, REASSEMBLY_SEPARATOR};
pub use client::{map_bounded, ServiceClient};
pub use judges::{classify_structure, extract_operations, judge_structure, score_dataman, ServiceEmbedder};
pub use parse::{
    parse_dataman, parse_operations, parse_rephrase, parse_structure_verdict, DataManScore, Operation, Rephrase,
    DATAMAN_CRITERIA, REPHRASE_MARKER,
};
pub use rephrase::{recycle_pool, recycled_id, rephrase_document, RECYCLED_SOURCE, RECYCLED_SUFFIX};
pub use templates::{render, PromptTemplate, TemplateName, ORGANIC_TEXT, RECYCLED_TEXT, TEXT};
pub use transport::{connect, HttpTransport, StdioTransport, Transport};
pub use wire::{GenerationParams, ServiceEndpoint, ServiceKind, ServiceRequest, ServiceResponse, TransportKind};
