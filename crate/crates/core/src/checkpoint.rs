//! Binary checkpoint format.
//!
//! Little-endian throughout:
//!
//! ```text
//! b"MTDC" | version u32 | M u32 | d u32 | layers u32
//! repeated per parameter, in ModelState::params() order:
//!     name_len u32 | name bytes (UTF-8) | rows*cols f64, row-major
//! ```
//!
//! Parameter order: `item_table w_q w_k w_v w_1 b_1 w_2 b_2 w_3 w_4 g w_c
//! gcn_w0 .. gcn_w{L-1} w_g`. Shapes are implied by the header.

use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::GraphParams;
use crate::intra::IntraParams;
use crate::model::ModelState;
use crate::numerics::{seeded_rng, DenseMatrix, Parameterized};
use crate::util::write_atomic;

pub const MAGIC: &[u8; 4] = b"MTDC";
pub const VERSION: u32 = 1;

pub fn to_bytes(state: &ModelState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        state.num_items() as u32,
        state.dim() as u32,
        state.num_layers() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for p in state.params() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        for x in p.value.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decodes a checkpoint. With `expected = Some((M, d))` the header must
/// match those dimensions.
pub fn from_bytes(buf: &[u8], expected: Option<(usize, usize)>) -> Result<ModelState> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let m = r.u32()? as usize;
    let d = r.u32()? as usize;
    let layers = r.u32()? as usize;
    if let Some((em, ed)) = expected {
        if (em, ed) != (m, d) {
            return Err(Error::Checkpoint(format!(
                "dimension mismatch: expected M={em}, d={ed}; found M={m}, d={d}"
            )));
        }
    }
    if layers == 0 || d == 0 || m == 0 {
        return Err(Error::Checkpoint(format!(
            "invalid header: M={m}, d={d}, layers={layers}"
        )));
    }
    // Shapes and names come from a zero-initialized template.
    let mut rng = seeded_rng(0);
    let mut state = ModelState {
        item_table: crate::numerics::ParamTensor::zeros("item_table", m, d),
        intra: IntraParams::init_with_std(d, 0.0, &mut rng),
        graph: GraphParams::init_with_std(d, layers, 0.0, &mut rng),
    };
    for p in state.params_mut() {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        if name != p.name {
            return Err(Error::Checkpoint(format!(
                "expected parameter `{}`, found `{name}`",
                p.name
            )));
        }
        let (rows, cols) = p.shape();
        let bytes = r.take(rows * cols * 8)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        p.value = DenseMatrix::new(rows, cols, data)?;
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last parameter",
            buf.len() - r.pos
        )));
    }
    Ok(state)
}

pub fn save(state: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &to_bytes(state))
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelState> {
    load_expecting(path, None)
}

pub fn load_expecting(path: impl AsRef<Path>, expected: Option<(usize, usize)>) -> Result<ModelState> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf, expected)
}
