use crate::basemodel::{force_decode_keys, BaseModel};
use crate::error::{Error, Result};
use crate::evalbench::corpus::DomainCorpus;
use crate::vecstore::Datastore;

/// One record per target token plus one end-of-sequence record per sentence.
/// With `use_domains`, each record is tagged with its sentence's domain id.
pub fn build_datastore_from_corpus(base: &dyn BaseModel, corpus: &DomainCorpus, use_domains: bool) -> Result<Datastore> {
    if corpus.is_empty() {
        return Err(Error::Empty("datastore corpus"));
    }
    let mut records = Vec::with_capacity(corpus.target_tokens() + corpus.len());
    for (n, s) in corpus.sentences.iter().enumerate() {
        let mut recs = force_decode_keys(base, n, &s.src, &s.tgt)?;
        if use_domains {
            recs.iter_mut().for_each(|r| r.domain = Some(s.domain));
        }
        records.extend(recs);
    }
    Datastore::build(&records, base.dim())
}
