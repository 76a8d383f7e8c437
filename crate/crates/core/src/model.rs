//! Question-answering model: variant descriptor, forward pass from tokens to
//! the concatenated entity and timestamp scores, training and checkpoints.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tqr_tensor::{io as tio, Adam, AdamConfig, Graph, NodeId, ParamId, ParamSet, Tensor};

use crate::embed::EmbeddingStore;
use crate::encoder::{linear, sinusoidal, Stack, TextEncoder, Vocab};
use crate::forge::{AnnKind, Question};
use crate::seed::rng_for;
use crate::supervision::{hard_time_ids, sample_between, AblationKind, AblationTables};
use crate::tkg::{EntityId, TemporalKg, TimeId};
use crate::{Result, TqrError};

const MAX_TOKENS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Base {
    TempoQr,
    EntityQr,
    CronKgqa,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Supervision {
    None,
    Hard,
    Soft,
    Ensemble,
    Ablation(AblationKind),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Fusion {
    Sum,
    Cat,
    Att,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Decoder {
    TComplEx,
    Dot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Variant {
    pub base: Base,
    pub supervision: Supervision,
    pub fusion: Fusion,
    pub decoder: Decoder,
}

impl Variant {
    pub const fn new(base: Base, supervision: Supervision) -> Self {
        Variant {
            base,
            supervision,
            fusion: Fusion::Sum,
            decoder: Decoder::TComplEx,
        }
    }

    pub const TEMPOQR_HARD: Variant = Variant::new(Base::TempoQr, Supervision::Hard);
    pub const TEMPOQR_SOFT: Variant = Variant::new(Base::TempoQr, Supervision::Soft);
    pub const ENTITYQR: Variant = Variant::new(Base::EntityQr, Supervision::None);
    pub const CRONKGQA: Variant = Variant::new(Base::CronKgqa, Supervision::None);

    pub fn validate(&self) -> Result<()> {
        if self.decoder == Decoder::Dot && matches!(self.supervision, Supervision::Soft | Supervision::Ensemble) {
            return Err(TqrError::Variant(
                "soft supervision inverts the TComplEx score and cannot run with the dot decoder".into(),
            ));
        }
        if self.base == Base::CronKgqa && self.fusion != Fusion::Sum {
            return Err(TqrError::Variant("cronkgqa has no fusion step to vary".into()));
        }
        Ok(())
    }

    /// Time embeddings enter the token matrix (TempoQR); otherwise they
    /// replace the dummy timestamp in entity scoring.
    pub fn fuses_time(&self) -> bool {
        self.base == Base::TempoQr && self.supervision != Supervision::None
    }

    pub fn overrides_time(&self) -> bool {
        self.base != Base::TempoQr && self.supervision != Supervision::None
    }

    fn uses_soft(&self) -> bool {
        matches!(self.supervision, Supervision::Soft | Supervision::Ensemble)
    }

    /// Reads the KG at question time (hard, ensemble and the ablations).
    pub fn uses_retrieval(&self) -> bool {
        matches!(self.supervision, Supervision::Hard | Supervision::Ensemble | Supervision::Ablation(_))
    }

    /// `base:supervision:fusion:decoder`, as written in checkpoint headers.
    pub fn descriptor(&self) -> String {
        format!(
            "{}:{}:{}:{}",
            base_name(self.base),
            sup_name(self.supervision),
            fusion_name(self.fusion),
            decoder_name(self.decoder)
        )
    }
}

fn base_name(b: Base) -> &'static str {
    match b {
        Base::TempoQr => "tempoqr",
        Base::EntityQr => "entityqr",
        Base::CronKgqa => "cronkgqa",
    }
}

fn sup_name(s: Supervision) -> &'static str {
    match s {
        Supervision::None => "none",
        Supervision::Hard => "hard",
        Supervision::Soft => "soft",
        Supervision::Ensemble => "ensemble",
        Supervision::Ablation(AblationKind::TcomplexSampled) => "sampled",
        Supervision::Ablation(AblationKind::PositionalStartEnd) => "positional",
        Supervision::Ablation(AblationKind::RandomStartEnd) => "random",
    }
}

fn fusion_name(f: Fusion) -> &'static str {
    match f {
        Fusion::Sum => "sum",
        Fusion::Cat => "cat",
        Fusion::Att => "att",
    }
}

fn decoder_name(d: Decoder) -> &'static str {
    match d {
        Decoder::TComplEx => "tcomplex",
        Decoder::Dot => "dot",
    }
}

fn parse_base(s: &str) -> Result<Base> {
    match s {
        "tempoqr" => Ok(Base::TempoQr),
        "entityqr" => Ok(Base::EntityQr),
        "cronkgqa" => Ok(Base::CronKgqa),
        _ => Err(TqrError::UnknownName { kind: "model base", name: s.into() }),
    }
}

fn parse_sup(s: &str) -> Result<Supervision> {
    Ok(match s {
        "none" => Supervision::None,
        "hard" => Supervision::Hard,
        "soft" => Supervision::Soft,
        "ensemble" => Supervision::Ensemble,
        other => Supervision::Ablation(other.parse().map_err(|_| TqrError::UnknownName {
            kind: "supervision",
            name: other.into(),
        })?),
    })
}

fn parse_fusion(s: &str) -> Result<Fusion> {
    match s {
        "sum" => Ok(Fusion::Sum),
        "cat" => Ok(Fusion::Cat),
        "att" => Ok(Fusion::Att),
        _ => Err(TqrError::UnknownName { kind: "fusion mode", name: s.into() }),
    }
}

impl FromStr for Fusion {
    type Err = TqrError;

    fn from_str(s: &str) -> Result<Self> {
        parse_fusion(s)
    }
}

fn parse_decoder(s: &str) -> Result<Decoder> {
    match s {
        "tcomplex" => Ok(Decoder::TComplEx),
        "dot" => Ok(Decoder::Dot),
        _ => Err(TqrError::UnknownName { kind: "decoder", name: s.into() }),
    }
}

impl FromStr for Variant {
    type Err = TqrError;

    /// `tempoqr-hard`, `entityqr-soft+dot`, `tempoqr-hard+att`, or the
    /// four-field descriptor form.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let v = if s.contains(':') {
            let parts: Vec<&str> = s.split(':').collect();
            if parts.len() != 4 {
                return Err(TqrError::Variant(format!("descriptor {s:?} needs four fields")));
            }
            Variant {
                base: parse_base(parts[0])?,
                supervision: parse_sup(parts[1])?,
                fusion: parse_fusion(parts[2])?,
                decoder: parse_decoder(parts[3])?,
            }
        } else {
            let mut mods = s.split('+');
            let head = mods.next().unwrap_or_default();
            let (b, sup) = head.split_once('-').unwrap_or((head, "none"));
            let mut v = Variant::new(parse_base(b)?, parse_sup(sup)?);
            for m in mods {
                match m {
                    "sum" | "cat" | "att" => v.fusion = parse_fusion(m)?,
                    "dot" | "tcomplex" => v.decoder = parse_decoder(m)?,
                    _ => return Err(TqrError::UnknownName { kind: "variant modifier", name: m.into() }),
                }
            }
            v
        };
        v.validate()?;
        Ok(v)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", base_name(self.base))?;
        if self.supervision != Supervision::None {
            write!(f, "-{}", sup_name(self.supervision))?;
        }
        if self.fusion != Fusion::Sum {
            write!(f, "+{}", fusion_name(self.fusion))?;
        }
        if self.decoder != Decoder::TComplEx {
            write!(f, "+{}", decoder_name(self.decoder))?;
        }
        Ok(())
    }
}

/// Architecture sizes; `dim` comes from the embedding store.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Arch {
    pub d_b: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    pub fusion_layers: usize,
    pub fusion_heads: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Arch {
            d_b: 64,
            text_layers: 2,
            text_heads: 4,
            fusion_layers: 3,
            fusion_heads: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 256,
            lr: 2e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub dev_hits1: Vec<f64>,
    /// 1-based epoch whose weights were kept; 0 means initialization.
    pub best_epoch: usize,
}

/// A question resolved against the model's id space.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    ids: Vec<usize>,
    /// (token row, kind, id) for every annotated token, rows counted with CLS.
    annotated: Vec<(usize, AnnKind, u32)>,
    entity_rows: Vec<usize>,
    subject: Option<EntityId>,
    object: Option<EntityId>,
    time: Option<TimeId>,
    retrieved: (TimeId, TimeId),
    /// Gold indices into the concatenated score vector.
    pub gold: Vec<usize>,
}

/// A ranked answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Answer {
    Entity(u32),
    Time(u32),
}

#[derive(Clone, Debug, PartialEq)]
struct Ids {
    w_b: ParamId,
    w_e: Option<ParamId>,
    w_t: Option<ParamId>,
    p_e: ParamId,
    p_t: ParamId,
    w_cat: Option<ParamId>,
}

#[derive(Clone, Debug)]
pub struct QaModel {
    variant: Variant,
    arch: Arch,
    seed: u64,
    params: ParamSet,
    text: TextEncoder,
    fusion: Option<Stack>,
    ids: Ids,
    store: Arc<EmbeddingStore>,
    kg: Arc<TemporalKg>,
    ablation: Option<AblationTables>,
    positions: Arc<Tensor>,
    entities_t: Arc<Tensor>,
    times_t: Arc<Tensor>,
}

/// Per-graph constant leaves.
#[derive(Default)]
struct StageNodes {
    q_b: Option<NodeId>,
    q_e: Option<NodeId>,
    q_t: Option<NodeId>,
    scope: Option<(NodeId, NodeId)>,
    q: Option<NodeId>,
}

/// Token matrices are `[tokens, D]`, row 0 is CLS. `q_e`/`q_t` are absent
/// for CronKGQA, `t1`/`t2` without supervision.
#[derive(Clone, Debug)]
pub struct Stages {
    pub q_b: Tensor,
    pub q_e: Option<Tensor>,
    pub q_t: Option<Tensor>,
    pub t1: Option<Tensor>,
    pub t2: Option<Tensor>,
    pub q: Tensor,
    pub entity_rows: Vec<usize>,
    pub annotated_rows: Vec<usize>,
}

struct Leaves<'a> {
    params: &'a ParamSet,
    entities: NodeId,
    times: NodeId,
    entities_t: NodeId,
    times_t: NodeId,
    positions: NodeId,
}

impl QaModel {
    pub fn new(
        variant: Variant,
        arch: Arch,
        vocab: Vocab,
        store: Arc<EmbeddingStore>,
        kg: Arc<TemporalKg>,
        seed: u64,
    ) -> Result<Self> {
        variant.validate()?;
        if !store.is_frozen() {
            return Err(TqrError::invalid("question answering needs a frozen embedding store"));
        }
        store.check_id_space(&kg)?;
        let d = store.dim();
        let mut params = ParamSet::new();
        let text = TextEncoder::new(&mut params, seed, vocab, arch.d_b, arch.text_layers, arch.text_heads)?;
        let w_b = linear(&mut params, seed, "W_B", arch.d_b, d);
        let (w_e, fusion) = if variant.base == Base::CronKgqa {
            (None, None)
        } else {
            let w_e = linear(&mut params, seed, "W_E", d, d);
            let f = Stack::new(&mut params, seed, "fusion", d, arch.fusion_layers, arch.fusion_heads)?;
            (Some(w_e), Some(f))
        };
        let w_t = variant.uses_soft().then(|| linear(&mut params, seed, "W_T", arch.d_b, d));
        let w_cat = (variant.fuses_time() && variant.fusion == Fusion::Cat).then(|| linear(&mut params, seed, "W_cat", 3 * d, d));
        let p_e = linear(&mut params, seed, "P_E", d, d);
        let p_t = linear(&mut params, seed, "P_T", d, d);
        let ne = store.num_entities();
        let cand = Tensor::new(vec![ne, d], store.entity_table().data()[..ne * d].to_vec())?;
        let ablation = matches!(variant.supervision, Supervision::Ablation(_)).then(|| AblationTables::new(&store, seed));
        Ok(QaModel {
            variant,
            seed,
            params,
            text,
            fusion,
            ids: Ids { w_b, w_e, w_t, p_e, p_t, w_cat },
            positions: Arc::new(sinusoidal(MAX_TOKENS, arch.d_b)),
            arch,
            entities_t: Arc::new(cand.transpose()),
            times_t: Arc::new(store.timestamp_table().transpose()),
            store,
            kg,
            ablation,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    pub fn kg(&self) -> &TemporalKg {
        &self.kg
    }

    pub fn vocab(&self) -> &Vocab {
        &self.text.vocab
    }

    /// Swap the graph used for retrieval (same id space required).
    pub fn set_kg(&mut self, kg: Arc<TemporalKg>) -> Result<()> {
        self.store.check_id_space(&kg)?;
        self.kg = kg;
        Ok(())
    }

    pub fn num_entities(&self) -> usize {
        self.store.num_entities()
    }

    pub fn num_timestamps(&self) -> usize {
        self.store.num_timestamps()
    }

    pub fn prepare(&self, q: &Question) -> Result<Prepared> {
        q.validate()?;
        let ne = self.num_entities() as u32;
        let nt = self.num_timestamps() as u32;
        if q.tokens.len() + 1 > MAX_TOKENS {
            return Err(TqrError::invalid(format!("question longer than {} tokens", MAX_TOKENS - 1)));
        }
        let mut annotated = Vec::new();
        let mut entity_rows = Vec::new();
        for a in &q.annotations {
            let limit = if a.kind == AnnKind::Entity { ne } else { nt };
            if a.id >= limit {
                return Err(TqrError::IdSpace(format!("annotation id {} outside the model's tables", a.id)));
            }
            for tok in a.span[0]..a.span[1] {
                annotated.push((tok + 1, a.kind, a.id));
                if a.kind == AnnKind::Entity {
                    entity_rows.push(tok + 1);
                }
            }
        }
        let (subject, object) = q.roles();
        if subject.is_none() && object.is_none() {
            return Err(TqrError::invalid("question annotates no entity"));
        }
        let offset = match q.answer_kind {
            crate::forge::AnswerKind::Entity => 0,
            crate::forge::AnswerKind::Time => self.num_entities(),
        };
        let limit = match q.answer_kind {
            crate::forge::AnswerKind::Entity => ne,
            crate::forge::AnswerKind::Time => nt,
        };
        if q.answers.iter().any(|&a| a >= limit) {
            return Err(TqrError::IdSpace("answer id outside the model's tables".into()));
        }
        let retrieved = if self.variant.uses_retrieval() {
            hard_time_ids(&self.kg, &q.entity_ids())?
        } else {
            (self.store.no_time(), self.store.no_time())
        };
        Ok(Prepared {
            ids: self.text.vocab.encode(&q.tokens)?,
            annotated,
            entity_rows,
            subject,
            object,
            time: q.time(),
            retrieved,
            gold: q.answers.iter().map(|&a| a as usize + offset).collect(),
        })
    }

    fn leaves(&self, g: &mut Graph) -> Leaves<'_> {
        self.leaves_with(g, &self.params)
    }

    fn leaves_with<'a>(&self, g: &mut Graph, params: &'a ParamSet) -> Leaves<'a> {
        Leaves {
            params,
            entities: g.input_shared(Arc::clone(self.store.entity_table())),
            times: g.input_shared(Arc::clone(self.store.timestamp_table())),
            entities_t: g.input_shared(Arc::clone(&self.entities_t)),
            times_t: g.input_shared(Arc::clone(&self.times_t)),
            positions: g.input_shared(Arc::clone(&self.positions)),
        }
    }

    /// `[1, |E| + |T|]` logits for one question.
    fn forward(&self, g: &mut Graph, l: &Leaves, p: &Prepared, rng: &mut ChaCha8Rng) -> Result<NodeId> {
        self.forward_staged(g, l, p, rng, &mut StageNodes::default())
    }

    fn forward_staged(&self, g: &mut Graph, l: &Leaves, p: &Prepared, rng: &mut ChaCha8Rng, st: &mut StageNodes) -> Result<NodeId> {
        let v = self.variant;
        let params = l.params;
        let dummy = self.store.dummy_entity();
        let h = self.text.forward(g, params, &p.ids, l.positions)?;
        let w_b = g.param(params, self.ids.w_b);
        let q_b = g.matmul(h, w_b)?;

        let scope = self.time_scope(g, l, p, h, rng)?;
        st.q_b = Some(q_b);
        st.scope = scope;
        let q = if v.base == Base::CronKgqa {
            g.slice_rows(q_b, 0, 1)?
        } else {
            let q_e = self.inject(g, l, p, q_b)?;
            let q_t = match scope {
                Some((t1, t2)) if v.fuses_time() => self.fuse_time(g, l, p, q_e, t1, t2)?,
                _ => q_e,
            };
            st.q_e = Some(q_e);
            st.q_t = Some(q_t);
            let fused = self.fusion.as_ref().expect("fusion stack").forward(g, params, q_t)?;
            g.slice_rows(fused, 0, 1)?
        };
        st.q = Some(q);

        let t_ent = match (p.time, scope) {
            (Some(t), _) => g.gather_rows(l.times, &[t.index()])?,
            (None, Some((t1, t2))) if v.overrides_time() => g.add(t1, t2)?,
            _ => g.gather_rows(l.times, &[self.store.no_time().index()])?,
        };
        let s = p.subject.or(p.object).expect("prepared questions annotate an entity");
        let o = p.object.filter(|o| Some(*o) != p.subject && p.subject.is_some());
        let p_e = g.param(params, self.ids.p_e);
        let p_t = g.param(params, self.ids.p_t);
        let r_e = g.matmul(q, p_e)?;
        let r_t = g.matmul(q, p_t)?;
        let es_t = g.gather_rows(l.entities, &[p.subject.unwrap_or(dummy).index()])?;
        let eo_t = g.gather_rows(l.entities, &[p.object.unwrap_or(dummy).index()])?;
        let (ent, time) = match v.decoder {
            Decoder::TComplEx => {
                let score = |g: &mut Graph, x: EntityId| -> Result<NodeId> {
                    let ex = g.gather_rows(l.entities, &[x.index()])?;
                    let a = g.complex_mul(ex, r_e)?;
                    let a = g.complex_mul(a, t_ent)?;
                    Ok(g.matmul(a, l.entities_t)?)
                };
                let mut ent = score(g, s)?;
                if let Some(o) = o {
                    let other = score(g, o)?;
                    ent = g.maximum(ent, other)?;
                }
                let eo_c = g.complex_conj(eo_t)?;
                let x = g.complex_mul(es_t, r_t)?;
                let x = g.complex_mul(x, eo_c)?;
                let x = g.complex_conj(x)?;
                (ent, g.matmul(x, l.times_t)?)
            }
            Decoder::Dot => {
                let a = g.add(r_e, t_ent)?;
                let ent = g.matmul(a, l.entities_t)?;
                let b = g.add(r_t, es_t)?;
                let b = g.add(b, eo_t)?;
                (ent, g.matmul(b, l.times_t)?)
            }
        };
        Ok(g.concat_cols(&[ent, time])?)
    }

    /// Replace annotated token rows by projected TKG embeddings.
    fn inject(&self, g: &mut Graph, l: &Leaves, p: &Prepared, q_b: NodeId) -> Result<NodeId> {
        if p.annotated.is_empty() {
            return Ok(q_b);
        }
        let mut parts = Vec::new();
        let mut rows = Vec::new();
        for (kind, table) in [(AnnKind::Entity, l.entities), (AnnKind::Timestamp, l.times)] {
            let ids: Vec<usize> = p.annotated.iter().filter(|a| a.1 == kind).map(|a| a.2 as usize).collect();
            if !ids.is_empty() {
                parts.push(g.gather_rows(table, &ids)?);
                rows.extend(p.annotated.iter().filter(|a| a.1 == kind).map(|a| a.0));
            }
        }
        let a = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts)? };
        let w_e = g.param(l.params, self.ids.w_e.expect("W_E"));
        let z = g.matmul(a, w_e)?;
        let n = p.ids.len();
        let mut pick: Vec<(NodeId, usize)> = (0..n).map(|i| (q_b, i)).collect();
        for (j, &r) in rows.iter().enumerate() {
            pick[r] = (z, j);
        }
        Ok(g.stack_rows(&pick)?)
    }

    fn fuse_time(&self, g: &mut Graph, l: &Leaves, p: &Prepared, q_e: NodeId, t1: NodeId, t2: NodeId) -> Result<NodeId> {
        let n = p.ids.len();
        match self.variant.fusion {
            Fusion::Sum => {
                if p.entity_rows.is_empty() {
                    return Ok(q_e);
                }
                let mut mask = Tensor::zeros(vec![n, 1]);
                for &r in &p.entity_rows {
                    mask.data_mut()[r] = 1.0;
                }
                let m = g.input(mask);
                let t = g.add(t1, t2)?;
                let spread = g.matmul(m, t)?;
                Ok(g.add(q_e, spread)?)
            }
            Fusion::Cat => {
                if p.entity_rows.is_empty() {
                    return Ok(q_e);
                }
                let k = p.entity_rows.len();
                let x = g.stack_rows(&p.entity_rows.iter().map(|&r| (q_e, r)).collect::<Vec<_>>())?;
                let ones = g.input(Tensor::filled(vec![k, 1], 1.0));
                let a = g.matmul(ones, t1)?;
                let b = g.matmul(ones, t2)?;
                let c = g.concat_cols(&[x, a, b])?;
                let w = g.param(l.params, self.ids.w_cat.expect("W_cat"));
                let y = g.matmul(c, w)?;
                let mut pick: Vec<(NodeId, usize)> = (0..n).map(|i| (q_e, i)).collect();
                for (j, &r) in p.entity_rows.iter().enumerate() {
                    pick[r] = (y, j);
                }
                Ok(g.stack_rows(&pick)?)
            }
            Fusion::Att => Ok(g.concat_rows(&[q_e, t1, t2])?),
        }
    }

    /// `(t1, t2)` as `[1, D]` nodes, or `None` without supervision.
    fn time_scope(
        &self,
        g: &mut Graph,
        l: &Leaves,
        p: &Prepared,
        h: NodeId,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<(NodeId, NodeId)>> {
        let (a, b) = p.retrieved;
        let hard = |g: &mut Graph| -> Result<(NodeId, NodeId)> {
            Ok((g.gather_rows(l.times, &[a.index()])?, g.gather_rows(l.times, &[b.index()])?))
        };
        let soft = |g: &mut Graph| -> Result<(NodeId, NodeId)> {
            let dummy = self.store.dummy_entity();
            let cls = g.slice_rows(h, 0, 1)?;
            let w_t = g.param(l.params, self.ids.w_t.expect("W_T"));
            let q_time = g.matmul(cls, w_t)?;
            let es = g.gather_rows(l.entities, &[p.subject.unwrap_or(dummy).index()])?;
            let eo = g.gather_rows(l.entities, &[p.object.unwrap_or(dummy).index()])?;
            let es_c = g.complex_conj(es)?;
            let eo_c = g.complex_conj(eo)?;
            let u1 = g.complex_mul(q_time, eo_c)?;
            let t1 = g.complex_mul(es, u1)?;
            let u2 = g.complex_mul(q_time, es_c)?;
            let t2 = g.complex_mul(eo, u2)?;
            Ok((g.complex_conj(t1)?, g.complex_conj(t2)?))
        };
        Ok(match self.variant.supervision {
            Supervision::None => None,
            Supervision::Hard => Some(hard(g)?),
            Supervision::Soft => Some(soft(g)?),
            Supervision::Ensemble => {
                let (h1, h2) = hard(g)?;
                let (s1, s2) = soft(g)?;
                Some((g.add(h1, s1)?, g.add(h2, s2)?))
            }
            Supervision::Ablation(kind) => {
                let tables = self.ablation.as_ref().expect("ablation tables");
                match kind {
                    AblationKind::TcomplexSampled => {
                        let t = sample_between(&self.kg, a, b, rng);
                        let n = g.gather_rows(l.times, &[t.index()])?;
                        Some((n, n))
                    }
                    AblationKind::PositionalStartEnd | AblationKind::RandomStartEnd => {
                        let table = if kind == AblationKind::PositionalStartEnd {
                            &tables.positional
                        } else {
                            &tables.random
                        };
                        let t1 = g.input(Tensor::row(table.row_slice(a.index()).to_vec()));
                        let t2 = g.input(Tensor::row(table.row_slice(b.index()).to_vec()));
                        Some((t1, t2))
                    }
                }
            }
        })
    }

    /// Intermediate token matrices of one evaluation forward pass.
    pub fn stages(&self, q: &Question) -> Result<Stages> {
        let p = self.prepare(q)?;
        let mut g = Graph::new();
        let l = self.leaves(&mut g);
        let mut st = StageNodes::default();
        self.forward_staged(&mut g, &l, &p, &mut rng_for(self.seed, "qa.eval"), &mut st)?;
        let val = |n: Option<NodeId>| n.map(|n| g.value(n).clone());
        Ok(Stages {
            q_b: val(st.q_b).expect("q_b recorded"),
            q_e: val(st.q_e),
            q_t: val(st.q_t),
            t1: val(st.scope.map(|s| s.0)),
            t2: val(st.scope.map(|s| s.1)),
            q: val(st.q).expect("q recorded"),
            entity_rows: p.entity_rows.clone(),
            annotated_rows: p.annotated.iter().map(|a| a.0).collect(),
        })
    }

    /// Concatenated entity then timestamp scores.
    pub fn scores(&self, q: &Question) -> Result<Vec<f64>> {
        self.scores_of(&self.prepare(q)?)
    }

    /// Scores with the fixed evaluation stream, so results do not depend on
    /// question order.
    pub fn scores_of(&self, p: &Prepared) -> Result<Vec<f64>> {
        self.scores_prepared(p, &mut rng_for(self.seed, "qa.eval"))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn scores_prepared(&self, p: &Prepared, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let l = self.leaves(&mut g);
        let out = self.forward(&mut g, &l, p, rng)?;
        Ok(g.value(out).data().to_vec())
    }

    /// Every entity and timestamp, best first, ties by concatenated index.
    pub fn predict(&self, q: &Question) -> Result<Vec<(Answer, f64)>> {
        let s = self.scores(q)?;
        Ok(rank(&s)
            .into_iter()
            .map(|i| (self.answer_of(i), s[i]))
            .collect())
    }

    pub fn answer_of(&self, index: usize) -> Answer {
        let ne = self.num_entities();
        if index < ne {
            Answer::Entity(index as u32)
        } else {
            Answer::Time((index - ne) as u32)
        }
    }

    /// Mean cross entropy over `batch` against one gold per question.
    pub fn loss_graph(&self, g: &mut Graph, batch: &[(&Prepared, usize)], rng: &mut ChaCha8Rng) -> Result<NodeId> {
        self.loss_graph_with(&self.params, g, batch, rng)
    }

    /// [`QaModel::loss_graph`] reading weights from `params`, which must be
    /// a copy of [`QaModel::params`] (for finite-difference checks).
    pub fn loss_graph_with(
        &self,
        params: &ParamSet,
        g: &mut Graph,
        batch: &[(&Prepared, usize)],
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        let l = self.leaves_with(g, params);
        let mut rows = Vec::with_capacity(batch.len());
        for (p, _) in batch {
            rows.push(self.forward(g, &l, p, rng)?);
        }
        let logits = if rows.len() == 1 { rows[0] } else { g.concat_rows(&rows)? };
        let targets: Vec<usize> = batch.iter().map(|(_, t)| *t).collect();
        Ok(g.cross_entropy(logits, &targets)?)
    }

    /// Snapshot of the graph op sequence for `q`, for structural comparison.
    pub fn trace(&self, q: &Question) -> Result<Vec<tqr_tensor::OpKind>> {
        let p = self.prepare(q)?;
        let mut g = Graph::new();
        let l = self.leaves(&mut g);
        self.forward(&mut g, &l, &p, &mut rng_for(self.seed, "qa.eval"))?;
        Ok(g.op_kinds())
    }

    // ---- checkpoints ---------------------------------------------------

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| TqrError::io(path, e))?;
        let mut w = BufWriter::new(f);
        let io = |e| TqrError::io(path, e);
        let a = &self.arch;
        writeln!(
            w,
            "TQRMODEL v1 {} {} {} {} {}",
            self.variant.descriptor(),
            self.store.dim(),
            a.d_b,
            a.fusion_layers,
            a.fusion_heads
        )
        .map_err(io)?;
        writeln!(w, "text {} {} seed {}", a.text_layers, a.text_heads, self.seed).map_err(io)?;
        writeln!(w, "store {}", self.store.checksum()).map_err(io)?;
        writeln!(w, "vocab {}", self.text.vocab.len()).map_err(io)?;
        for t in self.text.vocab.tokens() {
            writeln!(w, "{t}").map_err(io)?;
        }
        writeln!(w, "params {}", self.params.len()).map_err(io)?;
        for (_, p) in self.params.iter() {
            tio::write_named(&mut w, &p.name, p.value())?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>, store: Arc<EmbeddingStore>, kg: Arc<TemporalKg>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| TqrError::io(path, e))?;
        Self::read_from(&mut BufReader::new(f), store, kg)
    }

    pub fn read_from(r: &mut impl BufRead, store: Arc<EmbeddingStore>, kg: Arc<TemporalKg>) -> Result<Self> {
        let h = read_header(r)?;
        if h.dim != store.dim() {
            return Err(TqrError::IdSpace(format!("checkpoint width {} but store width {}", h.dim, store.dim())));
        }
        if h.store_checksum != store.checksum() {
            return Err(TqrError::IdSpace("checkpoint was trained against a different embedding store".into()));
        }
        let mut model = QaModel::new(h.variant, h.arch, Vocab::new(h.vocab.into_iter().skip(2)), store, kg, h.seed)?;
        let mut seen = 0;
        while let Some((name, t)) = tio::read_named(r)? {
            let id = model.params.id(&name).ok_or_else(|| TqrError::Format {
                what: "checkpoint",
                msg: format!("unexpected parameter {name}"),
            })?;
            if !t.is_finite() {
                return Err(TqrError::Format {
                    what: "checkpoint",
                    msg: format!("non-finite values in {name}"),
                });
            }
            model.params.set_value(id, t)?;
            seen += 1;
        }
        if seen != h.params || seen != model.params.len() {
            return Err(TqrError::Format {
                what: "checkpoint",
                msg: format!("expected {} parameters, found {seen}", model.params.len()),
            });
        }
        Ok(model)
    }

    /// Frozen-store checksum.
    pub fn store_checksum(&self) -> String {
        self.store.checksum()
    }
}

/// Parsed checkpoint preamble.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub variant: Variant,
    pub dim: usize,
    pub arch: Arch,
    pub seed: u64,
    pub store_checksum: String,
    pub vocab: Vec<String>,
    pub params: usize,
}

pub fn read_header(r: &mut impl BufRead) -> Result<CheckpointHeader> {
    let bad = |msg: &str| TqrError::Format {
        what: "checkpoint",
        msg: msg.to_string(),
    };
    let mut line = || -> Result<String> { tio::read_line(r, 4096)?.ok_or_else(|| bad("unexpected end of file")) };
    let head = line()?;
    let f: Vec<&str> = head.split(' ').collect();
    if f.len() != 7 || f[0] != "TQRMODEL" || f[1] != "v1" {
        return Err(bad("expected `TQRMODEL v1 <variant> <D> <D_B> <l> <h>`"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad number in header"));
    let variant: Variant = f[2].parse()?;
    let (dim, d_b, fl, fh) = (num(f[3])?, num(f[4])?, num(f[5])?, num(f[6])?);
    let text = line()?;
    let t: Vec<&str> = text.split(' ').collect();
    if t.len() != 5 || t[0] != "text" || t[3] != "seed" {
        return Err(bad("expected `text <layers> <heads> seed <seed>`"));
    }
    let seed = t[4].parse::<u64>().map_err(|_| bad("bad seed"))?;
    let arch = Arch {
        d_b,
        text_layers: num(t[1])?,
        text_heads: num(t[2])?,
        fusion_layers: fl,
        fusion_heads: fh,
    };
    if dim == 0 || dim % 2 != 0 || d_b == 0 || d_b > 4096 || dim > 4096 || arch.text_layers > 64 || fl > 64 {
        return Err(bad("implausible architecture sizes"));
    }
    let store_line = line()?;
    let store_checksum = store_line
        .strip_prefix("store ")
        .ok_or_else(|| bad("expected `store <checksum>`"))?
        .to_string();
    let vl = line()?;
    let n = vl
        .strip_prefix("vocab ")
        .ok_or_else(|| bad("expected `vocab <n>`"))
        .and_then(num)?;
    if !(2..=1_000_000).contains(&n) {
        return Err(bad("implausible vocabulary size"));
    }
    let mut vocab = Vec::with_capacity(n);
    for _ in 0..n {
        vocab.push(line()?);
    }
    if vocab[0] != crate::encoder::CLS || vocab[1] != crate::encoder::UNK {
        return Err(bad("vocabulary must start with [CLS] and [UNK]"));
    }
    let pl = line()?;
    let params = pl
        .strip_prefix("params ")
        .ok_or_else(|| bad("expected `params <n>`"))
        .and_then(num)?;
    Ok(CheckpointHeader {
        variant,
        dim,
        arch,
        seed,
        store_checksum,
        vocab,
        params,
    })
}

/// Indices sorted by descending score, ties by index.
pub fn rank(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Train with Adam, keeping the weights of the best dev Hits@1 epoch.
pub fn train_qa(model: &mut QaModel, train: &[Question], dev: &[Question], cfg: &TrainConfig) -> Result<TrainReport> {
    if cfg.batch_size == 0 {
        return Err(TqrError::invalid("batch size must be positive"));
    }
    let before = model.store_checksum();
    let train_p: Vec<Prepared> = train.iter().map(|q| model.prepare(q)).collect::<Result<_>>()?;
    let dev_p: Vec<Prepared> = dev.iter().map(|q| model.prepare(q)).collect::<Result<_>>()?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut order_rng = rng_for(cfg.seed, "qa.shuffle");
    let mut gold_rng = rng_for(cfg.seed, "qa.gold");
    let mut fwd_rng = rng_for(cfg.seed, "qa.forward");
    let mut report = TrainReport::default();
    let mut best: Option<(f64, ParamSet)> = None;
    let mut order: Vec<usize> = (0..train_p.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&Prepared, usize)> = chunk
                .iter()
                .map(|&i| {
                    let p = &train_p[i];
                    (p, p.gold[gold_rng.random_range(0..p.gold.len())])
                })
                .collect();
            let mut g = Graph::new();
            let loss = model.loss_graph(&mut g, &batch, &mut fwd_rng)?;
            total += g.value(loss).data()[0];
            batches += 1;
            g.backward(loss)?;
            g.accumulate_param_grads(&mut model.params);
            adam.step(&mut model.params)?;
        }
        report.epoch_loss.push(if batches > 0 { total / batches as f64 } else { 0.0 });
        if !dev_p.is_empty() {
            let h1 = hits1_prepared(model, &dev_p)?;
            report.dev_hits1.push(h1);
            if best.as_ref().is_none_or(|(b, _)| h1 > *b) {
                best = Some((h1, model.params.clone()));
                report.best_epoch = epoch;
            }
        } else {
            report.best_epoch = epoch;
        }
    }
    if let Some((_, p)) = best {
        model.params.copy_values_from(&p)?;
    }
    if model.store_checksum() != before {
        return Err(TqrError::invalid("embedding store changed during QA training"));
    }
    Ok(report)
}

fn hits1_prepared(model: &QaModel, qs: &[Prepared]) -> Result<f64> {
    let mut hit = 0usize;
    for p in qs {
        let s = model.scores_of(p)?;
        let top = rank(&s)[0];
        hit += p.gold.contains(&top) as usize;
    }
    Ok(hit as f64 / qs.len() as f64)
}

/// Text vocabulary for a template bank.
pub fn vocab_for(bank: &crate::forge::TemplateBank) -> Vocab {
    Vocab::new(bank.vocabulary())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::{generate_dataset, Mix, QType, TemplateBank};
    use crate::synth::{generate_kg, SynthConfig};

    fn fixture() -> (Arc<EmbeddingStore>, Arc<TemporalKg>, Vec<Question>, TemplateBank) {
        let kg = generate_kg(&SynthConfig::smoke()).unwrap();
        let mut store = EmbeddingStore::init(&kg, 8, 0.3, 1).unwrap();
        store.freeze();
        let bank = TemplateBank::default();
        let mix = Mix(vec![(QType::SimpleEntity, 6), (QType::SimpleTime, 4), (QType::BeforeAfter, 4), (QType::FirstLast, 4)]);
        let qs = generate_dataset(&kg, &mix, &bank, 3).unwrap();
        (Arc::new(store), Arc::new(kg), qs, bank)
    }

    fn small() -> Arch {
        Arch {
            d_b: 8,
            text_layers: 1,
            text_heads: 2,
            fusion_layers: 1,
            fusion_heads: 2,
        }
    }

    fn model(v: &str) -> (QaModel, Vec<Question>) {
        let (store, kg, qs, bank) = fixture();
        (QaModel::new(v.parse().unwrap(), small(), vocab_for(&bank), store, kg, 7).unwrap(), qs)
    }

    #[test]
    fn variant_names_round_trip() {
        for s in ["tempoqr-hard", "tempoqr-soft+cat", "entityqr-ensemble", "cronkgqa", "tempoqr-random+att", "entityqr-hard+dot"] {
            let v: Variant = s.parse().unwrap();
            assert_eq!(v.to_string(), s);
            assert_eq!(v.descriptor().parse::<Variant>().unwrap(), v);
        }
        assert!("tempoqr-soft+dot".parse::<Variant>().is_err());
        assert!("tempoqr-ensemble+dot".parse::<Variant>().is_err());
        assert!("cronkgqa+cat".parse::<Variant>().is_err());
        assert!("bert".parse::<Variant>().is_err());
    }

    #[test]
    fn scores_cover_entities_then_timestamps() {
        let (m, qs) = model("tempoqr-hard");
        for q in &qs {
            let s = m.scores(q).unwrap();
            assert_eq!(s.len(), m.num_entities() + m.num_timestamps());
            assert!(s.iter().all(|x| x.is_finite()));
        }
        let ranked = m.predict(&qs[0]).unwrap();
        assert_eq!(ranked.len(), m.num_entities() + m.num_timestamps());
        assert!(ranked.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn tempoqr_without_supervision_is_entityqr() {
        let (a, qs) = model("tempoqr-none");
        let (b, _) = model("entityqr");
        for q in &qs {
            assert_eq!(a.scores(q).unwrap(), b.scores(q).unwrap());
        }
    }

    #[test]
    fn uniform_scores_give_log_n_loss() {
        let (mut m, qs) = model("tempoqr-hard");
        for name in ["P_E", "P_T"] {
            let id = m.params.id(name).unwrap();
            let shape = m.params.value(id).shape().to_vec();
            m.params.set_value(id, Tensor::zeros(shape)).unwrap();
        }
        let p = m.prepare(&qs[0]).unwrap();
        let mut g = Graph::new();
        let loss = m.loss_graph(&mut g, &[(&p, p.gold[0])], &mut rng_for(0, "t")).unwrap();
        let n = (m.num_entities() + m.num_timestamps()) as f64;
        assert!((g.value(loss).data()[0] - n.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_epochs_keep_initialization() {
        let (mut m, qs) = model("tempoqr-soft");
        let before = m.params.clone();
        let r = train_qa(&mut m, &qs, &[], &TrainConfig { epochs: 0, ..TrainConfig::default() }).unwrap();
        assert!(r.epoch_loss.is_empty());
        for ((_, a), (_, b)) in before.iter().zip(m.params.iter()) {
            assert_eq!(a.value(), b.value());
        }
    }

    #[test]
    fn training_lowers_loss_and_keeps_store() {
        let (mut m, qs) = model("tempoqr-hard");
        let sum = m.store_checksum();
        let cfg = TrainConfig {
            epochs: 8,
            batch_size: 6,
            lr: 1e-2,
            seed: 1,
        };
        let r = train_qa(&mut m, &qs, &qs[..4], &cfg).unwrap();
        assert!(r.epoch_loss.last().unwrap() < &r.epoch_loss[0]);
        assert_eq!(m.store_checksum(), sum);
        assert!((1..=8).contains(&r.best_epoch));
    }

    #[test]
    fn unfrozen_store_is_rejected() {
        let (store, kg, _, bank) = fixture();
        let live = EmbeddingStore::init(&kg, 8, 0.3, 1).unwrap();
        assert!(QaModel::new(Variant::ENTITYQR, small(), vocab_for(&bank), Arc::new(live), kg, 0).is_err());
        drop(store);
    }

    #[test]
    fn checkpoint_round_trip() {
        let (m, qs) = model("tempoqr-ensemble+cat");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        m.save(&path).unwrap();
        let back = QaModel::load(&path, Arc::clone(&m.store), Arc::clone(&m.kg)).unwrap();
        assert_eq!(back.variant(), m.variant());
        for q in &qs {
            assert_eq!(back.scores(q).unwrap(), m.scores(q).unwrap());
        }
        let mut other = EmbeddingStore::init(&m.kg, 8, 0.3, 2).unwrap();
        other.freeze();
        match QaModel::load(&path, Arc::new(other), Arc::clone(&m.kg)) {
            Err(TqrError::IdSpace(_)) => {}
            r => panic!("expected an id-space error, got {:?}", r.map(|m| m.variant())),
        }
    }

    #[test]
    fn out_of_range_annotation_is_an_id_space_error() {
        let (m, qs) = model("cronkgqa");
        let mut q = qs[0].clone();
        q.annotations[0].id = 10_000;
        assert!(matches!(m.prepare(&q), Err(TqrError::IdSpace(_))));
    }
}
