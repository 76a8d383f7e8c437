//! TComplEx embeddings: scoring, pre-training by full-softmax link
//! prediction, filtered evaluation, and the on-disk store format.
//!
//! Every row is laid out as `[re_0 .. re_{D/2-1} | im_0 .. im_{D/2-1}]`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use tqr_tensor::{io as tio, Adam, AdamConfig, Graph, NodeId, ParamSet, Tensor};

use crate::seed::rng_for;
use crate::tkg::{EntityId, Quadruple, RelationId, TemporalKg, TimeId};
use crate::{Result, TqrError};

/// Real part of `sum_d a_d * b_d * c_d * conj(e_d)`.
pub fn tcomplex(a: &[f64], b: &[f64], c: &[f64], e: &[f64]) -> f64 {
    let h = a.len() / 2;
    let mut s = 0.0;
    for d in 0..h {
        let (ar, ai) = (a[d], a[h + d]);
        let (br, bi) = (b[d], b[h + d]);
        let (cr, ci) = (c[d], c[h + d]);
        let (er, ei) = (e[d], -e[h + d]);
        let (xr, xi) = (ar * br - ai * bi, ar * bi + ai * br);
        let (yr, yi) = (xr * cr - xi * ci, xr * ci + xi * cr);
        s += yr * er - yi * ei;
    }
    s
}

/// Elementwise complex product.
pub fn cmul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let h = a.len() / 2;
    let mut out = vec![0.0; a.len()];
    for d in 0..h {
        out[d] = a[d] * b[d] - a[h + d] * b[h + d];
        out[h + d] = a[d] * b[h + d] + a[h + d] * b[d];
    }
    out
}

pub fn conj(a: &[f64]) -> Vec<f64> {
    let h = a.len() / 2;
    a.iter().enumerate().map(|(i, x)| if i < h { *x } else { -x }).collect()
}

/// Timestamp score from `u = v_r * conj(e_o)`:
/// `<Re(e_s u), Re(t)> - <Im(e_s u), Im(t)>`, which equals [`tcomplex`].
pub fn time_score_decomposed(es: &[f64], u: &[f64], t: &[f64]) -> f64 {
    let h = es.len() / 2;
    let mut re = 0.0;
    let mut im = 0.0;
    for d in 0..h {
        let (sr, si, ur, ui) = (es[d], es[h + d], u[d], u[h + d]);
        re += (sr * ur - si * ui) * t[d];
        im += (sr * ui + si * ur) * t[h + d];
    }
    re - im
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedConfig {
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub n3_weight: f64,
    pub smooth_weight: f64,
    pub interval_cap: usize,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            dim: 64,
            epochs: 30,
            lr: 0.05,
            batch_size: 256,
            n3_weight: 1e-2,
            smooth_weight: 1e-2,
            interval_cap: 10,
            init_std: 0.05,
            seed: 0,
        }
    }
}

/// Entity, relation and timestamp tables. The entity table carries one
/// extra dummy row after the KG entities; the relation table holds the base
/// relations followed by their inverses; the timestamp table ends with
/// `NO_TIME`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    entities: Arc<Tensor>,
    relations: Arc<Tensor>,
    timestamps: Arc<Tensor>,
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    time_labels: Vec<String>,
    frozen: bool,
}

impl EmbeddingStore {
    /// Seeded Gaussian initialization, unfrozen.
    pub fn init(kg: &TemporalKg, dim: usize, std: f64, seed: u64) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(TqrError::invalid(format!("embedding width must be even and positive, got {dim}")));
        }
        let ne = kg.num_entities() + 1;
        let nr = 2 * kg.num_relations();
        let nt = kg.num_timestamps();
        let normal = Normal::new(0.0, std).map_err(|e| TqrError::invalid(e.to_string()))?;
        let mut rng = rng_for(seed, "embed.init");
        let mut table = |rows: usize| {
            let data = (0..rows * dim).map(|_| normal.sample(&mut rng)).collect();
            Arc::new(Tensor::new(vec![rows, dim], data).expect("shape"))
        };
        let mut entities = table(ne);
        // The dummy entity is the multiplicative identity (1 + 0i per
        // component), so a missing role leaves the other factors unchanged.
        let dummy = Arc::get_mut(&mut entities).expect("fresh table").row_slice_mut(ne - 1);
        for (k, x) in dummy.iter_mut().enumerate() {
            *x = if k < dim / 2 { 1.0 } else { 0.0 };
        }
        let relations = table(nr);
        let timestamps = table(nt);
        let mut relation_names: Vec<String> = kg.relations().names().to_vec();
        relation_names.extend(kg.relations().names().iter().map(|n| format!("{n}^-1")));
        Ok(EmbeddingStore {
            dim,
            entities,
            relations,
            timestamps,
            entity_names: kg.entities().names().to_vec(),
            relation_names,
            time_labels: (0..nt).map(|t| kg.time_label(TimeId(t as u32))).collect(),
            frozen: false,
        })
    }

    /// Build directly from tables (rows already include dummy/inverses/NO_TIME).
    pub fn from_tables(entities: Tensor, relations: Tensor, timestamps: Tensor) -> Result<Self> {
        let dim = entities.cols();
        if dim == 0 || dim % 2 != 0 {
            return Err(TqrError::invalid(format!("embedding width must be even and positive, got {dim}")));
        }
        if relations.cols() != dim || timestamps.cols() != dim {
            return Err(TqrError::invalid("tables disagree on embedding width"));
        }
        if entities.rows() < 2 || relations.rows() % 2 != 0 || timestamps.rows() < 1 {
            return Err(TqrError::invalid("need a dummy entity row, paired inverse relations and a NO_TIME row"));
        }
        let ne = entities.rows() - 1;
        let nr = relations.rows() / 2;
        let nt = timestamps.rows();
        Ok(EmbeddingStore {
            dim,
            entities: Arc::new(entities),
            relations: Arc::new(relations),
            timestamps: Arc::new(timestamps),
            entity_names: (0..ne).map(|i| format!("e{i}")).collect(),
            relation_names: (0..nr).map(|i| format!("r{i}")).chain((0..nr).map(|i| format!("r{i}^-1"))).collect(),
            time_labels: (0..nt).map(|i| if i + 1 == nt { crate::tkg::NO_TIME.into() } else { format!("t{i}") }).collect(),
            frozen: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// KG entities, excluding the dummy row.
    pub fn num_entities(&self) -> usize {
        self.entities.rows() - 1
    }

    pub fn num_base_relations(&self) -> usize {
        self.relations.rows() / 2
    }

    pub fn num_relations(&self) -> usize {
        self.relations.rows()
    }

    /// Including `NO_TIME`.
    pub fn num_timestamps(&self) -> usize {
        self.timestamps.rows()
    }

    pub fn dummy_entity(&self) -> EntityId {
        EntityId(self.num_entities() as u32)
    }

    pub fn no_time(&self) -> TimeId {
        TimeId(self.num_timestamps() as u32 - 1)
    }

    pub fn inverse(&self, r: RelationId) -> RelationId {
        let nr = self.num_base_relations() as u32;
        RelationId(if r.0 < nr { r.0 + nr } else { r.0 - nr })
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn time_labels(&self) -> &[String] {
        &self.time_labels
    }

    /// Entity table including the dummy row.
    pub fn entity_table(&self) -> &Arc<Tensor> {
        &self.entities
    }

    pub fn relation_table(&self) -> &Arc<Tensor> {
        &self.relations
    }

    pub fn timestamp_table(&self) -> &Arc<Tensor> {
        &self.timestamps
    }

    /// Row lookup; the dummy id is accepted.
    pub fn entity(&self, e: EntityId) -> Result<&[f64]> {
        if e.index() < self.entities.rows() {
            Ok(self.entities.row_slice(e.index()))
        } else {
            Err(TqrError::UnknownId { kind: "entity", id: e.0 })
        }
    }

    pub fn relation(&self, r: RelationId) -> Result<&[f64]> {
        if r.index() < self.relations.rows() {
            Ok(self.relations.row_slice(r.index()))
        } else {
            Err(TqrError::UnknownId { kind: "relation", id: r.0 })
        }
    }

    pub fn timestamp(&self, t: TimeId) -> Result<&[f64]> {
        if t.index() < self.timestamps.rows() {
            Ok(self.timestamps.row_slice(t.index()))
        } else {
            Err(TqrError::UnknownId { kind: "timestamp", id: t.0 })
        }
    }

    fn guard(&self) -> Result<()> {
        if self.frozen {
            Err(TqrError::Frozen)
        } else {
            Ok(())
        }
    }

    pub fn set_entity(&mut self, e: EntityId, row: &[f64]) -> Result<()> {
        self.guard()?;
        self.entity(e)?;
        Arc::make_mut(&mut self.entities).row_slice_mut(e.index()).copy_from_slice(row);
        Ok(())
    }

    pub fn set_relation(&mut self, r: RelationId, row: &[f64]) -> Result<()> {
        self.guard()?;
        self.relation(r)?;
        Arc::make_mut(&mut self.relations).row_slice_mut(r.index()).copy_from_slice(row);
        Ok(())
    }

    pub fn set_timestamp(&mut self, t: TimeId, row: &[f64]) -> Result<()> {
        self.guard()?;
        self.timestamp(t)?;
        Arc::make_mut(&mut self.timestamps).row_slice_mut(t.index()).copy_from_slice(row);
        Ok(())
    }

    pub fn score_fact(&self, s: EntityId, r: RelationId, o: EntityId, t: TimeId) -> Result<f64> {
        Ok(tcomplex(self.entity(s)?, self.relation(r)?, self.timestamp(t)?, self.entity(o)?))
    }

    /// Scores of `(s, r, e, t)` for every KG entity `e`.
    pub fn score_all_objects(&self, s: EntityId, r: RelationId, t: TimeId) -> Result<Vec<f64>> {
        let a = cmul(&cmul(self.entity(s)?, self.relation(r)?), self.timestamp(t)?);
        Ok(self.dot_rows(&a, &self.entities, self.num_entities()))
    }

    /// Scores of `(s, r, o, t)` for every timestamp `t`, via the
    /// decomposition with `u = v_r * conj(e_o)`.
    pub fn score_all_timestamps(&self, s: EntityId, r: RelationId, o: EntityId) -> Result<Vec<f64>> {
        let es = self.entity(s)?;
        let u = cmul(self.relation(r)?, &conj(self.entity(o)?));
        Ok((0..self.num_timestamps())
            .map(|t| time_score_decomposed(es, &u, self.timestamps.row_slice(t)))
            .collect())
    }

    fn dot_rows(&self, a: &[f64], table: &Tensor, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| table.row_slice(i).iter().zip(a).map(|(x, y)| x * y).sum())
            .collect()
    }

    /// SHA-256 over every table value, for frozen-store integrity checks.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for t in [&self.entities, &self.relations, &self.timestamps] {
            for x in t.data() {
                h.update(x.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    // ---- persistence ---------------------------------------------------

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| TqrError::io(path, e))?;
        let mut w = BufWriter::new(f);
        writeln!(
            w,
            "TKGEMB v1 {} {} {} {}",
            self.entities.rows(),
            self.relations.rows(),
            self.timestamps.rows(),
            self.dim
        )
        .map_err(|e| TqrError::io(path, e))?;
        for t in [&self.entities, &self.relations, &self.timestamps] {
            tio::write_f64s(&mut w, t.data())?;
        }
        w.flush().map_err(|e| TqrError::io(path, e))?;
        let side = sidecar(path);
        std::fs::write(&side, self.names_text()).map_err(|e| TqrError::io(&side, e))
    }

    fn names_text(&self) -> String {
        let mut s = String::new();
        for n in &self.entity_names {
            writeln!(s, "E\t{n}").unwrap();
        }
        for n in &self.relation_names[..self.num_base_relations()] {
            writeln!(s, "R\t{n}").unwrap();
        }
        for n in &self.time_labels {
            writeln!(s, "T\t{n}").unwrap();
        }
        s
    }

    /// Loaded stores are frozen.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| TqrError::io(path, e))?;
        let mut store = Self::read_from(&mut BufReader::new(f))?;
        let side = sidecar(path);
        let names = std::fs::read_to_string(&side).map_err(|e| TqrError::io(&side, e))?;
        store.apply_names(&names)?;
        Ok(store)
    }

    /// Decode the binary part (header and tables).
    pub fn read_from(r: &mut impl BufRead) -> Result<Self> {
        let bad = |msg: &str| TqrError::Format {
            what: "embedding store",
            msg: msg.to_string(),
        };
        let header = tio::read_line(r, 256)?.ok_or_else(|| bad("empty file"))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 6 || parts[0] != "TKGEMB" || parts[1] != "v1" {
            return Err(bad("expected `TKGEMB v1 <entities> <relations> <timestamps> <D>` header"));
        }
        let nums: Vec<usize> = parts[2..]
            .iter()
            .map(|p| p.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("non-numeric header field"))?;
        let (ne, nr, nt, d) = (nums[0], nums[1], nums[2], nums[3]);
        let total = [ne, nr, nt]
            .iter()
            .try_fold(0usize, |acc, n| n.checked_mul(d).and_then(|x| acc.checked_add(x)))
            .ok_or_else(|| bad("table sizes overflow"))?;
        if total > tio::MAX_NUMEL {
            return Err(bad("tables too large"));
        }
        let mut read = |rows: usize| -> Result<Tensor> {
            let data = tio::read_f64s(r, rows * d).map_err(|e| bad(&e.to_string()))?;
            if data.iter().any(|x| !x.is_finite()) {
                return Err(bad("non-finite value"));
            }
            Ok(Tensor::new(vec![rows, d], data)?)
        };
        let (e, rel, t) = (read(ne)?, read(nr)?, read(nt)?);
        let mut store = Self::from_tables(e, rel, t).map_err(|e| bad(&e.to_string()))?;
        store.frozen = true;
        Ok(store)
    }

    fn apply_names(&mut self, text: &str) -> Result<()> {
        let (mut e, mut r, mut t) = (Vec::new(), Vec::new(), Vec::new());
        for (i, line) in text.lines().enumerate() {
            let (tag, name) = line.split_once('\t').ok_or(TqrError::Parse {
                line: i + 1,
                msg: "expected `<E|R|T>\\t<name>`".into(),
            })?;
            match tag {
                "E" => e.push(name.to_string()),
                "R" => r.push(name.to_string()),
                "T" => t.push(name.to_string()),
                _ => {
                    return Err(TqrError::Parse {
                        line: i + 1,
                        msg: format!("unknown tag {tag:?}"),
                    })
                }
            }
        }
        if e.len() != self.num_entities() || r.len() != self.num_base_relations() || t.len() != self.num_timestamps() {
            return Err(TqrError::Format {
                what: "embedding name map",
                msg: "name counts do not match the tables".into(),
            });
        }
        let inv: Vec<String> = r.iter().map(|n| format!("{n}^-1")).collect();
        r.extend(inv);
        self.entity_names = e;
        self.relation_names = r;
        self.time_labels = t;
        Ok(())
    }

    /// Fails unless names, relation and timestamp labels line up with `kg`.
    pub fn check_id_space(&self, kg: &TemporalKg) -> Result<()> {
        if self.entity_names != kg.entities().names() {
            return Err(TqrError::IdSpace("entity tables differ between store and KG".into()));
        }
        if self.relation_names[..self.num_base_relations()] != *kg.relations().names() {
            return Err(TqrError::IdSpace("relation tables differ between store and KG".into()));
        }
        let labels: Vec<String> = (0..kg.num_timestamps()).map(|t| kg.time_label(TimeId(t as u32))).collect();
        if labels != self.time_labels {
            return Err(TqrError::IdSpace("timestamp tables differ between store and KG".into()));
        }
        Ok(())
    }
}

pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".names");
    PathBuf::from(s)
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

// ---- training -------------------------------------------------------------

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Mean total loss per epoch.
    pub epoch_loss: Vec<f64>,
}

/// Add the reciprocal quadruple `(o, r^-1, s, t)` for every input.
pub fn with_inverses(quads: &[Quadruple], num_base_relations: usize) -> Vec<Quadruple> {
    let nr = num_base_relations as u32;
    let mut out = Vec::with_capacity(quads.len() * 2);
    for q in quads {
        out.push(*q);
        out.push(Quadruple {
            subject: q.object,
            relation: RelationId(q.relation.0 + nr),
            object: q.subject,
            time: q.time,
        });
    }
    out
}

pub fn train_embeddings(kg: &TemporalKg, config: &EmbedConfig) -> Result<EmbeddingStore> {
    let quads = kg.expand_intervals(config.interval_cap)?;
    Ok(train_on(kg, &quads, config)?.0)
}

/// Train on an explicit list of base-relation quadruples (inverses are added
/// here). Returns the frozen store and the per-epoch loss.
pub fn train_on(kg: &TemporalKg, quads: &[Quadruple], config: &EmbedConfig) -> Result<(EmbeddingStore, TrainLog)> {
    if kg.facts().is_empty() || quads.is_empty() {
        return Err(TqrError::invalid("cannot train embeddings on an empty KG"));
    }
    if config.batch_size == 0 {
        return Err(TqrError::invalid("batch size must be positive"));
    }
    let mut store = EmbeddingStore::init(kg, config.dim, config.init_std, config.seed)?;
    let ne = store.num_entities();
    let ny = kg.num_years();
    let mut data = with_inverses(quads, kg.num_relations());
    let mut params = ParamSet::new();
    let pe = params.add("entities", (*store.entities).clone());
    let pr = params.add("relations", (*store.relations).clone());
    let pt = params.add("timestamps", (*store.timestamps).clone());
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr));
    let mut rng = rng_for(config.seed, "embed.shuffle");
    let mut log = TrainLog::default();
    for _ in 0..config.epochs {
        data.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in data.chunks(config.batch_size) {
            let mut g = Graph::new();
            let e = g.param(&params, pe);
            let r = g.param(&params, pr);
            let t = g.param(&params, pt);
            let ids = |f: fn(&Quadruple) -> usize| batch.iter().map(f).collect::<Vec<_>>();
            let es = g.gather_rows(e, &ids(|q| q.subject.index()))?;
            let vr = g.gather_rows(r, &ids(|q| q.relation.index()))?;
            let tt = g.gather_rows(t, &ids(|q| q.time.index()))?;
            let eo = g.gather_rows(e, &ids(|q| q.object.index()))?;
            let srel = g.complex_mul(es, vr)?;
            let a = g.complex_mul(srel, tt)?;
            let cand = g.slice_rows(e, 0, ne)?;
            let cand_t = g.transpose(cand)?;
            let obj_logits = g.matmul(a, cand_t)?;
            let ce_o = g.cross_entropy(obj_logits, &ids(|q| q.object.index()))?;
            let eo_c = g.complex_conj(eo)?;
            let gsr = g.complex_mul(srel, eo_c)?;
            let gsr_c = g.complex_conj(gsr)?;
            let t_t = g.transpose(t)?;
            let time_logits = g.matmul(gsr_c, t_t)?;
            let ce_t = g.cross_entropy(time_logits, &ids(|q| q.time.index()))?;
            let mut loss = g.add(ce_o, ce_t)?;
            if config.n3_weight > 0.0 {
                let rt = g.complex_mul(vr, tt)?;
                let mut n3 = None;
                for x in [es, rt, eo] {
                    let term = n3_term(&mut g, x)?;
                    n3 = Some(match n3 {
                        None => term,
                        Some(acc) => g.add(acc, term)?,
                    });
                }
                let n3 = g.scale(n3.expect("three terms"), config.n3_weight / batch.len() as f64)?;
                loss = g.add(loss, n3)?;
            }
            if config.smooth_weight > 0.0 && ny >= 2 {
                let s = smoothness(&mut g, t, ny)?;
                let s = g.scale(s, config.smooth_weight)?;
                loss = g.add(loss, s)?;
            }
            total += g.value(loss).data()[0];
            batches += 1;
            g.backward(loss)?;
            g.accumulate_param_grads(&mut params);
            adam.step(&mut params)?;
        }
        log.epoch_loss.push(total / batches as f64);
    }
    store.entities = params.get(pe).shared();
    store.relations = params.get(pr).shared();
    store.timestamps = params.get(pt).shared();
    store.freeze();
    Ok((store, log))
}

/// `sum |x_d|^3` over complex moduli of every row.
fn n3_term(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let h = g.shape(x)[1] / 2;
    let sq = g.mul(x, x)?;
    let re = g.slice_cols(sq, 0, h)?;
    let im = g.slice_cols(sq, h, 2 * h)?;
    let m2 = g.add(re, im)?;
    let m3 = g.pow(m2, 1.5)?;
    Ok(g.sum(m3)?)
}

/// `sum_y ||t_{y+1} - t_y||^2` over consecutive real years.
fn smoothness(g: &mut Graph, t: NodeId, ny: usize) -> Result<NodeId> {
    let hi = g.slice_rows(t, 1, ny)?;
    let lo = g.slice_rows(t, 0, ny - 1)?;
    let d = g.sub(hi, lo)?;
    let d2 = g.mul(d, d)?;
    Ok(g.sum(d2)?)
}

/// Total consecutive-year distance `sum_y ||t_{y+1} - t_y||` of a store.
pub fn consecutive_year_distance(store: &EmbeddingStore, num_years: usize) -> f64 {
    let t = store.timestamp_table();
    (1..num_years)
        .map(|y| {
            t.row_slice(y)
                .iter()
                .zip(t.row_slice(y - 1))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .sum()
}

// ---- evaluation -------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LinkMetrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits10: f64,
    pub queries: usize,
}

/// Seeded link-prediction holdout over the expanded quadruples: returns
/// (train, test) with `ceil(fraction * n)` test quadruples.
pub fn holdout_split(quads: &[Quadruple], fraction: f64, seed: u64) -> Result<(Vec<Quadruple>, Vec<Quadruple>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(TqrError::invalid(format!("holdout fraction {fraction} outside [0, 1)")));
    }
    let mut q = quads.to_vec();
    q.shuffle(&mut rng_for(seed, "holdout"));
    let n_test = (fraction * q.len() as f64).ceil() as usize;
    let train = q.split_off(n_test);
    Ok((train, q))
}

/// 1-based rank of `gold` after removing `filtered` candidates; ties go to
/// the lower id.
pub fn filtered_rank(scores: &[f64], gold: usize, filtered: &HashSet<usize>) -> usize {
    let g = scores[gold];
    1 + scores
        .iter()
        .enumerate()
        .filter(|(i, s)| *i != gold && !filtered.contains(i) && (**s > g || (**s == g && *i < gold)))
        .count()
}

/// Filtered object ranking in both directions (the subject side is asked
/// through the inverse relation). `known` holds all true base quadruples.
pub fn evaluate_link_prediction(
    store: &EmbeddingStore,
    test: &[Quadruple],
    known: &HashSet<Quadruple>,
) -> Result<LinkMetrics> {
    if !store.is_frozen() {
        return Err(TqrError::invalid("link prediction evaluation needs a frozen store"));
    }
    let mut objects_of: std::collections::HashMap<(EntityId, RelationId, TimeId), Vec<usize>> = Default::default();
    for q in known {
        objects_of.entry((q.subject, q.relation, q.time)).or_default().push(q.object.index());
        objects_of
            .entry((q.object, store.inverse(q.relation), q.time))
            .or_default()
            .push(q.subject.index());
    }
    let mut m = LinkMetrics::default();
    for q in test {
        for (s, r, o) in [(q.subject, q.relation, q.object), (q.object, store.inverse(q.relation), q.subject)] {
            let scores = store.score_all_objects(s, r, q.time)?;
            let filtered: HashSet<usize> = objects_of
                .get(&(s, r, q.time))
                .map(|v| v.iter().copied().filter(|&i| i != o.index()).collect())
                .unwrap_or_default();
            let rank = filtered_rank(&scores, o.index(), &filtered);
            m.mrr += 1.0 / rank as f64;
            m.hits1 += (rank <= 1) as u8 as f64;
            m.hits10 += (rank <= 10) as u8 as f64;
            m.queries += 1;
        }
    }
    if m.queries > 0 {
        let n = m.queries as f64;
        m.mrr /= n;
        m.hits1 /= n;
        m.hits10 /= n;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tkg::{Span, TkgBuilder};

    fn tiny() -> TemporalKg {
        let mut b = TkgBuilder::new();
        b.add("A", "r", "B", Span::Interval { start: 2000, end: 2001 }).unwrap();
        b.add("B", "r", "C", Span::Interval { start: 2001, end: 2001 }).unwrap();
        b.build()
    }

    #[test]
    fn unit_scores() {
        let one = [1.0, 0.0];
        let i = [0.0, 1.0];
        assert_eq!(tcomplex(&one, &one, &one, &one), 1.0);
        assert_eq!(tcomplex(&i, &one, &one, &i), 1.0);
        assert_eq!(tcomplex(&one, &one, &i, &one), 0.0);
        assert_eq!(time_score_decomposed(&one, &one, &[0.3, 0.7]), 0.3);
        assert_eq!(time_score_decomposed(&one, &one, &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn odd_width_rejected() {
        assert!(EmbeddingStore::init(&tiny(), 3, 0.1, 0).is_err());
        let cfg = EmbedConfig { dim: 5, ..Default::default() };
        assert!(train_embeddings(&tiny(), &cfg).is_err());
    }

    #[test]
    fn zero_epochs_is_init() {
        let kg = tiny();
        let cfg = EmbedConfig { dim: 8, epochs: 0, seed: 3, ..Default::default() };
        let trained = train_embeddings(&kg, &cfg).unwrap();
        let mut init = EmbeddingStore::init(&kg, 8, cfg.init_std, 3).unwrap();
        assert!(!init.is_frozen());
        init.freeze();
        assert_eq!(trained, init);
    }

    #[test]
    fn frozen_rejects_writes() {
        let mut s = EmbeddingStore::init(&tiny(), 4, 0.1, 0).unwrap();
        s.set_entity(EntityId(0), &[1.0; 4]).unwrap();
        s.freeze();
        assert!(matches!(s.set_entity(EntityId(0), &[0.0; 4]), Err(TqrError::Frozen)));
        assert!(matches!(s.set_relation(RelationId(0), &[0.0; 4]), Err(TqrError::Frozen)));
        assert!(matches!(s.set_timestamp(TimeId(0), &[0.0; 4]), Err(TqrError::Frozen)));
    }

    #[test]
    fn invalid_ids() {
        let s = EmbeddingStore::init(&tiny(), 4, 0.1, 0).unwrap();
        assert!(s.score_fact(EntityId(9), RelationId(0), EntityId(0), TimeId(0)).is_err());
        assert!(s.score_all_objects(EntityId(0), RelationId(5), TimeId(0)).is_err());
        assert!(s.score_all_timestamps(EntityId(0), RelationId(0), EntityId(7)).is_err());
    }

    #[test]
    fn batched_scores_match_loop() {
        let s = EmbeddingStore::init(&tiny(), 6, 0.5, 1).unwrap();
        let (a, r, t) = (EntityId(0), RelationId(1), TimeId(1));
        let v = s.score_all_objects(a, r, t).unwrap();
        assert_eq!(v.len(), s.num_entities());
        for (o, x) in v.iter().enumerate() {
            let y = s.score_fact(a, r, EntityId(o as u32), t).unwrap();
            assert!((x - y).abs() < 1e-12);
        }
        let v = s.score_all_timestamps(a, r, EntityId(2)).unwrap();
        assert_eq!(v.len(), s.num_timestamps());
        for (tt, x) in v.iter().enumerate() {
            let y = s.score_fact(a, r, EntityId(2), TimeId(tt as u32)).unwrap();
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_objects_score_zero() {
        let kg = tiny();
        let mut s = EmbeddingStore::init(&kg, 4, 0.5, 1).unwrap();
        for e in 0..s.num_entities() {
            if e != 0 {
                s.set_entity(EntityId(e as u32), &[0.0; 4]).unwrap();
            }
        }
        let v = s.score_all_objects(EntityId(0), RelationId(0), TimeId(0)).unwrap();
        assert!(v[1..].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn rank_ties_by_id() {
        let scores = vec![0.0; 5];
        for g in 0..5 {
            assert_eq!(filtered_rank(&scores, g, &HashSet::new()), g + 1);
        }
        let f: HashSet<usize> = [0, 1].into_iter().collect();
        assert_eq!(filtered_rank(&scores, 3, &f), 2);
    }

    #[test]
    fn save_load_round_trip() {
        let kg = tiny();
        let mut s = EmbeddingStore::init(&kg, 4, 0.3, 9).unwrap();
        s.freeze();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.bin");
        s.save(&p).unwrap();
        let back = EmbeddingStore::load(&p).unwrap();
        assert_eq!(back, s);
        back.check_id_space(&kg).unwrap();
        assert_eq!(back.checksum(), s.checksum());
    }

    #[test]
    fn truncated_store_rejected() {
        let mut bytes = b"TKGEMB v1 3 2 3 4\n".to_vec();
        bytes.extend(std::iter::repeat(0u8).take(8 * 10));
        assert!(EmbeddingStore::read_from(&mut &bytes[..]).is_err());
        assert!(EmbeddingStore::read_from(&mut &b"TKGEMB v1 99999999999 2 2 99999999\n"[..]).is_err());
    }

    #[test]
    fn inverses_present_in_training_set() {
        let kg = tiny();
        let q = kg.expand_intervals(10).unwrap();
        let all = with_inverses(&q, kg.num_relations());
        for x in &q {
            assert!(all.contains(&Quadruple {
                subject: x.object,
                relation: RelationId(x.relation.0 + 1),
                object: x.subject,
                time: x.time
            }));
        }
    }
}
