//! Embedding tables and scoring for TransE, DistMult, RESCAL and RotatE.
//!
//! Every score factors as `f(q(h, r), t)` with a query vector `q`, which
//! lets tail queries score all candidates after one projection and lets
//! gradients flow through `q` uniformly:
//!
//! | kind     | q(h, r)            | f(q, t)        |
//! |----------|--------------------|----------------|
//! | TransE   | h + r              | -‖q - t‖₂      |
//! | DistMult | h ∘ r              | q · t          |
//! | RESCAL   | hᵀ W_r             | q · t          |
//! | RotatE   | h ∘ e^{iθ_r}       | -‖q - t‖₂      |
//!
//! RotatE entity rows hold `dim` real parts followed by `dim` imaginary
//! parts; relation rows hold `dim` phases in `[0, 2π)`.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use kgx_core::{EntityId, RelationId, Triple, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::KgeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    TransE,
    DistMult,
    Rescal,
    RotatE,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::TransE, ModelKind::DistMult, ModelKind::Rescal, ModelKind::RotatE];

    pub fn code(self) -> u8 {
        match self {
            ModelKind::TransE => 0,
            ModelKind::DistMult => 1,
            ModelKind::Rescal => 2,
            ModelKind::RotatE => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        ModelKind::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::TransE => "transe",
            ModelKind::DistMult => "distmult",
            ModelKind::Rescal => "rescal",
            ModelKind::RotatE => "rotate",
        }
    }

    /// True for models whose score is a negative distance.
    pub fn is_distance(self) -> bool {
        matches!(self, ModelKind::TransE | ModelKind::RotatE)
    }

    pub fn entity_width(self, dim: usize) -> usize {
        match self {
            ModelKind::RotatE => 2 * dim,
            _ => dim,
        }
    }

    pub fn relation_width(self, dim: usize) -> usize {
        match self {
            ModelKind::Rescal => dim * dim,
            _ => dim,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown model '{s}', expected transe, distmult, rescal or rotate"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KgeModel {
    pub kind: ModelKind,
    pub dim: usize,
    pub vocab: Vocabulary,
    pub entities: Vec<f32>,
    pub relations: Vec<f32>,
}

/// Gradient of a single score with respect to the rows it touches.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrad {
    pub head: Vec<f64>,
    pub relation: Vec<f64>,
    pub tail: Vec<f64>,
}

impl KgeModel {
    /// Tables drawn from uniform(±0.5/√dim); RotatE phases from [0, 2π).
    pub fn init(kind: ModelKind, dim: usize, vocab: Vocabulary, seed: u64) -> Result<Self, KgeError> {
        if dim == 0 {
            return Err(KgeError::InvalidConfig("dim must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 0.5 / (dim as f64).sqrt();
        let n_ent = vocab.num_entities() * kind.entity_width(dim);
        let n_rel = vocab.num_relations() * kind.relation_width(dim);
        let entities = (0..n_ent).map(|_| rng.random_range(-bound..bound) as f32).collect();
        let relations = (0..n_rel)
            .map(|_| match kind {
                ModelKind::RotatE => wrap_phase(rng.random_range(0.0..TAU)),
                _ => rng.random_range(-bound..bound) as f32,
            })
            .collect();
        Ok(KgeModel {
            kind,
            dim,
            vocab,
            entities,
            relations,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.num_entities()
    }

    pub fn num_relations(&self) -> usize {
        self.vocab.num_relations()
    }

    pub fn entity_width(&self) -> usize {
        self.kind.entity_width(self.dim)
    }

    pub fn relation_width(&self) -> usize {
        self.kind.relation_width(self.dim)
    }

    pub fn entity_row(&self, e: EntityId) -> &[f32] {
        let w = self.entity_width();
        &self.entities[e.index() * w..(e.index() + 1) * w]
    }

    pub fn relation_row(&self, r: RelationId) -> &[f32] {
        let w = self.relation_width();
        &self.relations[r.index() * w..(r.index() + 1) * w]
    }

    pub fn entity_row_mut(&mut self, e: EntityId) -> &mut [f32] {
        let w = self.entity_width();
        &mut self.entities[e.index() * w..(e.index() + 1) * w]
    }

    pub fn relation_row_mut(&mut self, r: RelationId) -> &mut [f32] {
        let w = self.relation_width();
        &mut self.relations[r.index() * w..(r.index() + 1) * w]
    }

    pub fn check(&self, t: &Triple) -> Result<(), KgeError> {
        let ne = self.num_entities() as u32;
        if t.head.0 >= ne || t.tail.0 >= ne {
            return Err(KgeError::Lookup(format!("entity id out of range in {t:?}")));
        }
        if t.relation.0 >= self.num_relations() as u32 {
            return Err(KgeError::Lookup(format!("relation id {} out of range", t.relation.0)));
        }
        Ok(())
    }

    /// `q(h, r)` in f64.
    pub fn query(&self, h: EntityId, r: RelationId) -> Vec<f64> {
        let hv = self.entity_row(h);
        let rv = self.relation_row(r);
        let d = self.dim;
        match self.kind {
            ModelKind::TransE => hv.iter().zip(rv).map(|(&a, &b)| f64::from(a) + f64::from(b)).collect(),
            ModelKind::DistMult => hv.iter().zip(rv).map(|(&a, &b)| f64::from(a) * f64::from(b)).collect(),
            ModelKind::Rescal => {
                let mut q = vec![0.0; d];
                for (i, &hi) in hv.iter().enumerate() {
                    let hi = f64::from(hi);
                    for (j, qj) in q.iter_mut().enumerate() {
                        *qj += hi * f64::from(rv[i * d + j]);
                    }
                }
                q
            }
            ModelKind::RotatE => {
                let mut q = vec![0.0; 2 * d];
                for k in 0..d {
                    let (s, c) = f64::from(rv[k]).sin_cos();
                    let (re, im) = (f64::from(hv[k]), f64::from(hv[d + k]));
                    q[k] = re * c - im * s;
                    q[d + k] = re * s + im * c;
                }
                q
            }
        }
    }

    /// `f(q, t)`.
    pub fn score_query(&self, q: &[f64], t: EntityId) -> f64 {
        let tv = self.entity_row(t);
        if self.kind.is_distance() {
            -q.iter().zip(tv).map(|(&a, &b)| (a - f64::from(b)).powi(2)).sum::<f64>().sqrt()
        } else {
            q.iter().zip(tv).map(|(&a, &b)| a * f64::from(b)).sum()
        }
    }

    pub fn score(&self, t: &Triple) -> f64 {
        self.score_query(&self.query(t.head, t.relation), t.tail)
    }

    pub fn score_triple(&self, t: &Triple) -> Result<f64, KgeError> {
        self.check(t)?;
        Ok(self.score(t))
    }

    /// Scores of `(h, r, e)` for every entity `e`.
    pub fn score_tails(&self, h: EntityId, r: RelationId) -> Vec<f64> {
        let q = self.query(h, r);
        (0..self.num_entities() as u32).map(|e| self.score_query(&q, EntityId(e))).collect()
    }

    /// Scores of `(e, r, t)` for every entity `e`.
    pub fn score_heads(&self, r: RelationId, t: EntityId) -> Vec<f64> {
        (0..self.num_entities() as u32)
            .map(|e| self.score_query(&self.query(EntityId(e), r), t))
            .collect()
    }

    /// `∂f/∂q` and `∂f/∂t` for fixed `q` and tail row.
    fn outer_grads(&self, q: &[f64], t: EntityId) -> (Vec<f64>, Vec<f64>) {
        let tv = self.entity_row(t);
        if self.kind.is_distance() {
            let diff: Vec<f64> = q.iter().zip(tv).map(|(&a, &b)| a - f64::from(b)).collect();
            let norm = diff.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let dq: Vec<f64> = diff.iter().map(|x| -x / norm).collect();
            let dt = diff.iter().map(|x| x / norm).collect();
            (dq, dt)
        } else {
            (tv.iter().map(|&b| f64::from(b)).collect(), q.to_vec())
        }
    }

    /// Back-propagates `dq` through `q(h, r)` into head and relation rows.
    pub fn query_backward(&self, h: EntityId, r: RelationId, q: &[f64], dq: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hv = self.entity_row(h);
        let rv = self.relation_row(r);
        let d = self.dim;
        match self.kind {
            ModelKind::TransE => (dq.to_vec(), dq.to_vec()),
            ModelKind::DistMult => (
                dq.iter().zip(rv).map(|(&g, &b)| g * f64::from(b)).collect(),
                dq.iter().zip(hv).map(|(&g, &a)| g * f64::from(a)).collect(),
            ),
            ModelKind::Rescal => {
                let mut dh = vec![0.0; d];
                let mut dw = vec![0.0; d * d];
                for i in 0..d {
                    let hi = f64::from(hv[i]);
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += f64::from(rv[i * d + j]) * dq[j];
                        dw[i * d + j] = hi * dq[j];
                    }
                    dh[i] = acc;
                }
                (dh, dw)
            }
            ModelKind::RotatE => {
                let mut dh = vec![0.0; 2 * d];
                let mut dtheta = vec![0.0; d];
                for k in 0..d {
                    let (s, c) = f64::from(rv[k]).sin_cos();
                    let (g_re, g_im) = (dq[k], dq[d + k]);
                    dh[k] = g_re * c + g_im * s;
                    dh[d + k] = -g_re * s + g_im * c;
                    dtheta[k] = -g_re * q[d + k] + g_im * q[k];
                }
                (dh, dtheta)
            }
        }
    }

    /// Analytic gradient of `score(t)`.
    pub fn score_grad(&self, t: &Triple) -> ScoreGrad {
        let q = self.query(t.head, t.relation);
        let (dq, dt) = self.outer_grads(&q, t.tail);
        let (dh, dr) = self.query_backward(t.head, t.relation, &q, &dq);
        ScoreGrad {
            head: dh,
            relation: dr,
            tail: dt,
        }
    }

    /// `Σ_e coeff[e] · ∂f(q, e)/∂q` for a tail query: the gradient of a
    /// weighted sum of candidate scores with respect to the query vector.
    pub fn weighted_query_grad(&self, q: &[f64], coeff: &[f64]) -> Vec<f64> {
        let mut dq = vec![0.0; q.len()];
        for (e, &c) in coeff.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let (g, _) = self.outer_grads(q, EntityId(e as u32));
            for (a, b) in dq.iter_mut().zip(g) {
                *a += c * b;
            }
        }
        dq
    }

    /// Restores the RotatE phase invariant after an update.
    pub fn normalize_relation(&mut self, r: RelationId) {
        if self.kind == ModelKind::RotatE {
            for p in self.relation_row_mut(r) {
                *p = wrap_phase(f64::from(*p));
            }
        }
    }
}

/// Maps an angle into `[0, 2π)` as f32.
pub fn wrap_phase(x: f64) -> f32 {
    let w = x.rem_euclid(TAU) as f32;
    if w >= TAU as f32 || w < 0.0 {
        0.0
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(n_ent: usize, n_rel: usize) -> Vocabulary {
        Vocabulary::from_labels((0..n_ent).map(|i| format!("e{i}")).collect(), (0..n_rel).map(|i| format!("r{i}")).collect()).unwrap()
    }

    fn t(h: u32, r: u32, t: u32) -> Triple {
        Triple::new(EntityId(h), RelationId(r), EntityId(t))
    }

    #[test]
    fn transe_exact_translation() {
        let mut m = KgeModel::init(ModelKind::TransE, 2, vocab(2, 1), 0).unwrap();
        m.entities = vec![1.0, 0.0, 1.0, 1.0];
        m.relations = vec![0.0, 1.0];
        assert_eq!(m.score(&t(0, 0, 1)), 0.0);
        assert!((m.score(&t(1, 0, 0)) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn rotate_identity_rotation() {
        let mut m = KgeModel::init(ModelKind::RotatE, 2, vocab(3, 1), 1).unwrap();
        m.relations = vec![0.0, 0.0];
        let a = m.entity_row(EntityId(0)).to_vec();
        let b = m.entity_row(EntityId(1)).to_vec();
        let dist: f64 = a.iter().zip(&b).map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2)).sum::<f64>().sqrt();
        assert!((m.score(&t(0, 0, 1)) + dist).abs() < 1e-12);
        assert_eq!(m.score(&t(2, 0, 2)), 0.0);
        assert!(m.score(&t(0, 0, 1)) < 0.0);
    }

    #[test]
    fn rotate_half_turn() {
        let mut m = KgeModel::init(ModelKind::RotatE, 1, vocab(2, 1), 1).unwrap();
        m.entities = vec![1.0, 0.0, -1.0, 0.0];
        m.relations = vec![std::f32::consts::PI];
        assert!(m.score(&t(0, 0, 1)).abs() < 1e-6);
    }

    #[test]
    fn shapes() {
        for kind in ModelKind::ALL {
            let m = KgeModel::init(kind, 4, vocab(7, 3), 2).unwrap();
            assert_eq!(m.entities.len(), 7 * kind.entity_width(4));
            assert_eq!(m.relations.len(), 3 * kind.relation_width(4));
            assert_eq!(kind.name().parse::<ModelKind>().unwrap(), kind);
            assert_eq!(ModelKind::from_code(kind.code()), Some(kind));
        }
        assert!(KgeModel::init(ModelKind::DistMult, 0, vocab(2, 1), 0).is_err());
        let m = KgeModel::init(ModelKind::RotatE, 8, vocab(2, 5), 3).unwrap();
        assert!(m.relations.iter().all(|&p| (0.0..TAU as f32).contains(&p)));
    }

    #[test]
    fn lookup_errors() {
        let m = KgeModel::init(ModelKind::DistMult, 2, vocab(2, 1), 0).unwrap();
        assert!(m.score_triple(&t(0, 0, 2)).is_err());
        assert!(m.score_triple(&t(0, 1, 1)).is_err());
        assert!(m.score_triple(&t(1, 0, 0)).is_ok());
    }

    #[test]
    fn tail_and_head_vectors_match_single_scores() {
        for kind in ModelKind::ALL {
            let m = KgeModel::init(kind, 3, vocab(5, 2), 4).unwrap();
            let tails = m.score_tails(EntityId(1), RelationId(1));
            let heads = m.score_heads(RelationId(0), EntityId(3));
            for e in 0..5u32 {
                assert_eq!(tails[e as usize], m.score(&t(1, 1, e)));
                assert_eq!(heads[e as usize], m.score(&t(e, 0, 3)));
            }
        }
    }

    #[test]
    fn wrap_phase_range() {
        for x in [-0.1, 0.0, TAU, TAU + 0.5, -TAU * 3.0, 100.0, -1e-9] {
            let w = wrap_phase(x);
            assert!((0.0..TAU as f32).contains(&w), "{x} -> {w}");
        }
    }

    proptest! {
        #[test]
        fn distmult_is_symmetric(seed in any::<u64>(), h in 0u32..6, tt in 0u32..6, r in 0u32..2) {
            let m = KgeModel::init(ModelKind::DistMult, 5, vocab(6, 2), seed).unwrap();
            prop_assert_eq!(m.score(&t(h, r, tt)), m.score(&t(tt, r, h)));
        }
    }
}
