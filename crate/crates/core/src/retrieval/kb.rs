use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;

use crate::data::{SourceId, Window};
use crate::error::{Error, Result};
use crate::numerics::ops::{cosine_with_norms, norm};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Something that maps a (normalized) context window to an embedding.
pub trait Embedder<S: Scalar> {
    fn embedding_dim(&self) -> usize;
    fn embed(&self, context: &[S]) -> Result<Vec<S>>;
    /// Identifies the exact weights, so stale stores can be detected.
    fn fingerprint(&self) -> [u8; 32];
}

#[derive(Clone, Debug, PartialEq)]
pub struct KbEntry<S> {
    pub id: u64,
    pub context: Vec<S>,
    pub horizon: Vec<S>,
    pub embedding: Vec<S>,
    /// Not stored in the binary file; restored from the sidecar when present.
    pub source_id: Option<SourceId>,
}

/// Immutable store of windows and their context embeddings.
#[derive(Clone, Debug)]
pub struct KnowledgeBase<S> {
    context_len: usize,
    horizon_len: usize,
    dim: usize,
    encoder_hash: [u8; 32],
    entries: Vec<KbEntry<S>>,
    norms: Vec<S>,
    by_source: HashMap<SourceId, u64>,
}

impl<S: Scalar> PartialEq for KnowledgeBase<S> {
    fn eq(&self, other: &Self) -> bool {
        self.context_len == other.context_len
            && self.horizon_len == other.horizon_len
            && self.dim == other.dim
            && self.encoder_hash == other.encoder_hash
            && self.entries == other.entries
    }
}

/// Exact top-K answer; similarities are non-increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalResult<S> {
    pub ids: Vec<u64>,
    pub similarities: Vec<S>,
    /// `K × L`, row `k` is the horizon of `ids[k]`.
    pub horizons: Tensor<S>,
}

impl<S: Scalar> KnowledgeBase<S> {
    /// Assembles a store from entries whose ids must be `0..n` in order.
    pub fn from_entries(
        context_len: usize,
        horizon_len: usize,
        dim: usize,
        encoder_hash: [u8; 32],
        entries: Vec<KbEntry<S>>,
    ) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if e.id != i as u64 {
                return Err(Error::Corrupt(format!("entry {i} has id {}; ids must be dense 0..n", e.id)));
            }
            if e.context.len() != context_len || e.horizon.len() != horizon_len || e.embedding.len() != dim {
                return Err(Error::dim(
                    "knowledge base entry",
                    &[context_len, horizon_len, dim],
                    &[e.context.len(), e.horizon.len(), e.embedding.len()],
                ));
            }
        }
        let norms = entries.iter().map(|e| norm(&e.embedding)).collect();
        let by_source = entries.iter().filter_map(|e| e.source_id.map(|s| (s, e.id))).collect();
        Ok(Self {
            context_len,
            horizon_len,
            dim,
            encoder_hash,
            entries,
            norms,
            by_source,
        })
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn horizon_len(&self) -> usize {
        self.horizon_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn encoder_hash(&self) -> &[u8; 32] {
        &self.encoder_hash
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[KbEntry<S>] {
        &self.entries
    }

    pub fn entry(&self, id: u64) -> Option<&KbEntry<S>> {
        self.entries.get(id as usize)
    }

    pub fn id_for_source(&self, source: &SourceId) -> Option<u64> {
        self.by_source.get(source).copied()
    }

    /// Re-attaches source ids (e.g. from the sidecar) after a load.
    pub fn set_sources(&mut self, sources: &[Option<SourceId>]) -> Result<()> {
        if sources.len() != self.entries.len() {
            return Err(Error::Corrupt(format!(
                "{} source ids for {} entries",
                sources.len(),
                self.entries.len()
            )));
        }
        self.by_source.clear();
        for (e, s) in self.entries.iter_mut().zip(sources) {
            e.source_id = *s;
            if let Some(s) = s {
                self.by_source.insert(*s, e.id);
            }
        }
        Ok(())
    }

    /// Number of entries a query may draw from after exclusion.
    pub fn eligible(&self, exclude_id: Option<u64>) -> usize {
        let excluded = exclude_id.map_or(0, |id| usize::from((id as usize) < self.entries.len()));
        self.entries.len() - excluded
    }

    fn check_query(&self, q: &[S], k: usize, exclude_id: Option<u64>) -> Result<()> {
        if q.len() != self.dim {
            return Err(Error::dim("top_k query", &[self.dim], &[q.len()]));
        }
        let available = self.eligible(exclude_id);
        if k == 0 || k > available {
            return Err(Error::Domain(format!(
                "cannot retrieve K={k} neighbours: knowledge base has n={} entries, {available} eligible",
                self.entries.len()
            )));
        }
        Ok(())
    }

    fn scan(&self, q: &[S], qn: S, range: std::ops::Range<usize>, exclude_id: Option<u64>) -> Vec<(S, u64)> {
        self.entries[range.clone()]
            .iter()
            .zip(&self.norms[range])
            .filter(|(e, _)| Some(e.id) != exclude_id)
            .map(|(e, &n)| (cosine_with_norms(q, &e.embedding, qn, n), e.id))
            .collect()
    }

    fn finish(&self, mut best: Vec<(S, u64)>, k: usize) -> RetrievalResult<S> {
        select_top(&mut best, k);
        let mut horizons = Vec::with_capacity(k * self.horizon_len);
        for &(_, id) in &best {
            horizons.extend_from_slice(&self.entries[id as usize].horizon);
        }
        RetrievalResult {
            ids: best.iter().map(|&(_, id)| id).collect(),
            similarities: best.iter().map(|&(s, _)| s).collect(),
            horizons: Tensor::matrix(k, self.horizon_len, horizons).expect("k ≥ 1 and L ≥ 1"),
        }
    }

    /// Exact top-K by cosine similarity; ties go to the smaller id and
    /// `exclude_id` is never returned.
    pub fn top_k(&self, q: &[S], k: usize, exclude_id: Option<u64>) -> Result<RetrievalResult<S>> {
        self.check_query(q, k, exclude_id)?;
        let best = self.scan(q, norm(q), 0..self.entries.len(), exclude_id);
        Ok(self.finish(best, k))
    }

    /// Same answer as [`top_k`](Self::top_k), with the scan split into
    /// `shards` pieces on the rayon pool and merged under the same order.
    pub fn top_k_sharded(&self, q: &[S], k: usize, exclude_id: Option<u64>, shards: usize) -> Result<RetrievalResult<S>> {
        self.check_query(q, k, exclude_id)?;
        let n = self.entries.len();
        let shards = shards.clamp(1, n.max(1));
        let chunk = n.div_ceil(shards);
        let qn = norm(q);
        let merged: Vec<(S, u64)> = (0..shards)
            .into_par_iter()
            .map(|s| {
                let range = (s * chunk).min(n)..((s + 1) * chunk).min(n);
                let mut local = self.scan(q, qn, range, exclude_id);
                select_top(&mut local, k);
                local
            })
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect();
        Ok(self.finish(merged, k))
    }
}

/// Descending similarity, then ascending id.
pub fn rank_order<S: Scalar>(a: &(S, u64), b: &(S, u64)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

fn select_top<S: Scalar>(v: &mut Vec<(S, u64)>, k: usize) {
    if v.len() > k {
        v.select_nth_unstable_by(k - 1, rank_order);
        v.truncate(k);
    }
    v.sort_unstable_by(rank_order);
}

/// Embeds every window's context with `encoder` and assigns dense ids in
/// input order.
pub fn build_kb<S: Scalar, E: Embedder<S> + Sync>(windows: &[Window<S>], encoder: &E) -> Result<KnowledgeBase<S>> {
    let (t, l) = windows
        .first()
        .map(|w| (w.context_len(), w.horizon_len()))
        .unwrap_or((0, 0));
    if let Some(bad) = windows.iter().find(|w| w.context_len() != t || w.horizon_len() != l) {
        return Err(Error::Config(format!(
            "heterogeneous windows: expected (T={t}, L={l}), found (T={}, L={})",
            bad.context_len(),
            bad.horizon_len()
        )));
    }
    let embeddings: Vec<Vec<S>> = windows
        .par_iter()
        .map(|w| encoder.embed(w.context.data()))
        .collect::<Result<_>>()?;
    let entries = windows
        .iter()
        .zip(embeddings)
        .enumerate()
        .map(|(i, (w, embedding))| KbEntry {
            id: i as u64,
            context: w.context.data().to_vec(),
            horizon: w.horizon.data().to_vec(),
            embedding,
            source_id: Some(w.source_id),
        })
        .collect();
    KnowledgeBase::from_entries(t, l, encoder.embedding_dim(), encoder.fingerprint(), entries)
}
