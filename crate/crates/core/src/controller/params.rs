use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Mat;
use super::ControllerError;
use crate::graph::FactGraph;

const MAGIC: &[u8; 4] = b"STPG";
pub const FORMAT_VERSION: u32 = 1;

/// Rows of the structural symbol table.
pub(crate) const SYM_BOS: usize = 0;
pub(crate) const SYM_OPEN: usize = 1;
pub(crate) const SYM_CLOSE: usize = 2;
pub(crate) const SYM_FORWARD: usize = 3;
pub(crate) const SYM_BACKWARD: usize = 4;
const N_SYM: usize = 5;

/// Embedding and hidden sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// entity embedding
    pub d_e: usize,
    /// relation embedding
    pub d_r: usize,
    /// action / history space
    pub d_h: usize,
    /// S/E/R type vector
    pub d_t: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            d_e: 32,
            d_r: 32,
            d_h: 64,
            d_t: 8,
        }
    }
}

impl Dims {
    /// Plan-symbol embedding size (entity part ++ relation part).
    pub fn d_sym(&self) -> usize {
        self.d_e + self.d_r
    }

    pub fn d_edge_in(&self) -> usize {
        2 * self.d_e + self.d_r
    }

    pub fn d_node_in(&self) -> usize {
        self.d_e + 2 * self.d_h
    }

    pub fn d_lstm_in(&self, with_types: bool) -> usize {
        self.d_sym() + if with_types { self.d_t } else { 0 }
    }
}

/// All trainable tables of the planner controller. Row 0 of the entity and
/// relation tables is the UNK row.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub dims: Dims,
    pub with_types: bool,
    pub entity_vocab: Vec<String>,
    pub relation_vocab: Vec<String>,
    pub ent: Mat,
    pub rel: Mat,
    pub sym: Mat,
    pub types: Mat,
    pub e_proj: Mat,
    pub v_proj: Mat,
    pub pop: Mat,
    pub lstm_w: Mat,
    pub lstm_u: Mat,
    pub lstm_b: Mat,
}

pub const BLOCK_NAMES: [&str; 10] = [
    "ent", "rel", "sym", "types", "e_proj", "v_proj", "pop", "lstm_w", "lstm_u", "lstm_b",
];

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Mat::uniform(rows, cols, bound, rng)
}

fn embedding(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    let bound = (6.0 / (1 + cols) as f64).sqrt();
    Mat::uniform(rows, cols, bound, rng)
}

impl Params {
    /// Random initialization over the given vocabularies.
    pub fn init(
        dims: Dims,
        with_types: bool,
        entity_vocab: Vec<String>,
        relation_vocab: Vec<String>,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_in = dims.d_lstm_in(with_types);
        let ent = embedding(entity_vocab.len() + 1, dims.d_e, &mut rng);
        let rel = embedding(relation_vocab.len() + 1, dims.d_r, &mut rng);
        let sym = embedding(N_SYM, dims.d_sym(), &mut rng);
        let types = Mat::uniform(3, dims.d_t, 0.1, &mut rng);
        let e_proj = glorot(dims.d_h, dims.d_edge_in(), &mut rng);
        let v_proj = glorot(dims.d_h, dims.d_node_in(), &mut rng);
        let pop = Mat::uniform(1, dims.d_h, 0.1, &mut rng);
        let lstm_w = glorot(4 * dims.d_h, d_in, &mut rng);
        let lstm_u = glorot(4 * dims.d_h, dims.d_h, &mut rng);
        let mut lstm_b = Mat::zeros(1, 4 * dims.d_h);
        // forget gate starts open
        lstm_b.data[dims.d_h..2 * dims.d_h].fill(1.0);
        Params {
            dims,
            with_types,
            entity_vocab,
            relation_vocab,
            ent,
            rel,
            sym,
            types,
            e_proj,
            v_proj,
            pop,
            lstm_w,
            lstm_u,
            lstm_b,
        }
    }

    /// Vocabularies (sorted) collected from a set of graphs.
    pub fn vocab_from<'a>(graphs: impl IntoIterator<Item = &'a FactGraph>) -> (Vec<String>, Vec<String>) {
        let mut ents = BTreeSet::new();
        let mut rels = BTreeSet::new();
        for g in graphs {
            ents.extend(g.entities().iter().map(|e| e.surface.clone()));
            rels.extend(g.relations().iter().cloned());
        }
        (ents.into_iter().collect(), rels.into_iter().collect())
    }

    /// Same shapes, all zeros; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let z = |m: &Mat| Mat::zeros(m.rows, m.cols);
        Params {
            dims: self.dims,
            with_types: self.with_types,
            entity_vocab: self.entity_vocab.clone(),
            relation_vocab: self.relation_vocab.clone(),
            ent: z(&self.ent),
            rel: z(&self.rel),
            sym: z(&self.sym),
            types: z(&self.types),
            e_proj: z(&self.e_proj),
            v_proj: z(&self.v_proj),
            pop: z(&self.pop),
            lstm_w: z(&self.lstm_w),
            lstm_u: z(&self.lstm_u),
            lstm_b: z(&self.lstm_b),
        }
    }

    pub fn blocks(&self) -> [&Mat; 10] {
        [
            &self.ent,
            &self.rel,
            &self.sym,
            &self.types,
            &self.e_proj,
            &self.v_proj,
            &self.pop,
            &self.lstm_w,
            &self.lstm_u,
            &self.lstm_b,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Mat; 10] {
        [
            &mut self.ent,
            &mut self.rel,
            &mut self.sym,
            &mut self.types,
            &mut self.e_proj,
            &mut self.v_proj,
            &mut self.pop,
            &mut self.lstm_w,
            &mut self.lstm_u,
            &mut self.lstm_b,
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.blocks().iter().map(|m| m.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|m| m.is_finite())
    }

    pub fn entity_row(&self, surface: &str) -> usize {
        self.entity_vocab
            .binary_search_by(|s| s.as_str().cmp(surface))
            .map_or(0, |i| i + 1)
    }

    pub fn relation_row(&self, name: &str) -> usize {
        self.relation_vocab
            .binary_search_by(|s| s.as_str().cmp(name))
            .map_or(0, |i| i + 1)
    }

    fn shape_ok(&self) -> bool {
        let d = self.dims;
        let expect = [
            (self.entity_vocab.len() + 1, d.d_e),
            (self.relation_vocab.len() + 1, d.d_r),
            (N_SYM, d.d_sym()),
            (3, d.d_t),
            (d.d_h, d.d_edge_in()),
            (d.d_h, d.d_node_in()),
            (1, d.d_h),
            (4 * d.d_h, d.d_lstm_in(self.with_types)),
            (4 * d.d_h, d.d_h),
            (1, 4 * d.d_h),
        ];
        self.blocks()
            .iter()
            .zip(expect)
            .all(|(m, (r, c))| m.rows == r && m.cols == c && m.data.len() == r * c)
    }

    /// Little-endian binary: magic, version, dims, type flag, vocabularies,
    /// then every table as rows, cols and f64 data in declared order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for d in [self.dims.d_e, self.dims.d_r, self.dims.d_h, self.dims.d_t] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(self.with_types as u8);
        for vocab in [&self.entity_vocab, &self.relation_vocab] {
            out.extend_from_slice(&(vocab.len() as u32).to_le_bytes());
            for s in vocab {
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
        }
        for m in self.blocks() {
            out.extend_from_slice(&(m.rows as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols as u32).to_le_bytes());
            for x in &m.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ControllerError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(ControllerError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(ControllerError::Version(version));
        }
        let dims = Dims {
            d_e: r.u32()? as usize,
            d_r: r.u32()? as usize,
            d_h: r.u32()? as usize,
            d_t: r.u32()? as usize,
        };
        let with_types = match r.take(1)?[0] {
            0 => false,
            1 => true,
            _ => return Err(ControllerError::Corrupt("type flag")),
        };
        let mut vocabs = Vec::new();
        for _ in 0..2 {
            let n = r.u32()? as usize;
            let mut v = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                let len = r.u32()? as usize;
                let s = std::str::from_utf8(r.take(len)?)
                    .map_err(|_| ControllerError::Corrupt("vocabulary entry"))?;
                v.push(s.to_string());
            }
            vocabs.push(v);
        }
        let relation_vocab = vocabs.pop().expect("two vocabs");
        let entity_vocab = vocabs.pop().expect("two vocabs");
        let mut mats = Vec::with_capacity(10);
        for _ in 0..10 {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let n = rows
                .checked_mul(cols)
                .ok_or(ControllerError::Corrupt("table size"))?;
            let raw = r.take(n.checked_mul(8).ok_or(ControllerError::Corrupt("table size"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            mats.push(Mat { rows, cols, data });
        }
        if r.pos != bytes.len() {
            return Err(ControllerError::Corrupt("trailing bytes"));
        }
        let mut it = mats.into_iter();
        let mut next = || it.next().expect("ten tables");
        let p = Params {
            dims,
            with_types,
            entity_vocab,
            relation_vocab,
            ent: next(),
            rel: next(),
            sym: next(),
            types: next(),
            e_proj: next(),
            v_proj: next(),
            pop: next(),
            lstm_w: next(),
            lstm_u: next(),
            lstm_b: next(),
        };
        if !p.shape_ok() {
            return Err(ControllerError::Corrupt("table shapes do not match dims"));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<(), ControllerError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ControllerError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ControllerError> {
        let end = self.pos.checked_add(n).ok_or(ControllerError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(ControllerError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ControllerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
