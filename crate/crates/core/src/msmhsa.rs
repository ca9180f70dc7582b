//! Multi-scale multi-head self-attention.
//!
//! Q/K/V are split channel-wise into one slice per head. Head `i` cuts its
//! slice into an `l × l` grid of square patches (`l = 16 / patch_size`) and,
//! for every query patch `m`, sums the attention it pays to each key patch
//! `n` separately:
//!
//! ```text
//! h_m = Σ_n softmax_rows(q_m k_nᵀ / √d) v_n
//! ```
//!
//! With tokens ordered patch-major, all `(m, n)` score blocks together form
//! the full `HW × HW` score matrix, so a head costs two GEMMs plus a softmax
//! that normalizes each `P`-wide block of a row on its own. Head outputs are
//! reassembled to the full map and concatenated in head order.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::dims4;
use crate::tensor::Tensor;

/// Side of the token grid every head partitions.
pub const GRID: usize = 16;

/// Patch sizes a head may use, coarse to fine.
pub const PATCH_SIZES: [usize; 4] = [16, 8, 4, 2];

/// Ordered set of per-head patch sizes; one head per entry.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ScaleSet {
    sizes: Vec<usize>,
}

impl ScaleSet {
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::config("scales", "at least one patch size is required"));
        }
        for (i, &s) in sizes.iter().enumerate() {
            if !PATCH_SIZES.contains(&s) {
                return Err(Error::config(
                    "scales",
                    format!("patch size {s} is not one of 16, 8, 4, 2"),
                ));
            }
            if sizes[..i].contains(&s) {
                return Err(Error::config("scales", format!("patch size {s} listed twice")));
            }
        }
        Ok(Self {
            sizes: sizes.to_vec(),
        })
    }

    pub fn patch_sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Grid divisions per head: 16 → 1, 8 → 2, 4 → 4, 2 → 8.
    pub fn divisions(&self) -> Vec<usize> {
        self.sizes.iter().map(|s| GRID / s).collect()
    }

    pub fn head_count(&self) -> usize {
        self.sizes.len()
    }

    /// All 15 non-empty subsets of {16, 8, 4, 2}, by size then lexicographically.
    pub fn all_subsets() -> Vec<ScaleSet> {
        let mut out = Vec::with_capacity(15);
        for k in 1..=PATCH_SIZES.len() {
            for mask in 1u32..16 {
                if mask.count_ones() as usize != k {
                    continue;
                }
                let sizes: Vec<usize> = PATCH_SIZES
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << (3 - i)) != 0)
                    .map(|(_, &s)| s)
                    .collect();
                out.push(ScaleSet { sizes });
            }
        }
        // Lexicographic on the index pattern: subsets containing 16 first.
        out.sort_by_key(|s| {
            let idx: Vec<usize> = s
                .sizes
                .iter()
                .map(|x| PATCH_SIZES.iter().position(|p| p == x).unwrap())
                .collect();
            (idx.len(), idx)
        });
        out
    }
}

impl Default for ScaleSet {
    fn default() -> Self {
        Self {
            sizes: vec![16, 4, 2],
        }
    }
}

impl fmt::Display for ScaleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.sizes.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for ScaleSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let sizes = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::config("scales", format!("`{p}` is not a patch size")))
            })
            .collect::<Result<Vec<_>>>()?;
        ScaleSet::new(&sizes)
    }
}

/// Equal contiguous channel ranges, one per head.
pub fn head_slices(channels: usize, heads: usize) -> Result<Vec<Range<usize>>> {
    if heads == 0 || channels % heads != 0 {
        return Err(Error::config(
            "embed_dim",
            format!("{channels} channels cannot be split evenly across {heads} heads"),
        ));
    }
    let w = channels / heads;
    Ok((0..heads).map(|h| h * w..(h + 1) * w).collect())
}

fn check_division(op: &'static str, h: usize, w: usize, l: usize) -> Result<()> {
    if l == 0 || h % l != 0 || w % l != 0 {
        return Err(Error::config(
            "scales",
            format!("{op}: {l} divisions do not tile a {h}x{w} map"),
        ));
    }
    Ok(())
}

/// `[B, c, H, W]` → `[B·l², c, H/l, W/l]`, patches in row-major grid order.
pub fn partition(x: &Tensor, l: usize) -> Result<Tensor> {
    let [b, c, h, w] = dims4("partition", x)?;
    check_division("partition", h, w, l)?;
    let (ph, pw) = (h / l, w / l);
    x.reshape(&[b, c, l, ph, l, pw])?
        .permute(&[0, 2, 4, 1, 3, 5])?
        .reshape(&[b * l * l, c, ph, pw])
}

/// Inverse of [`partition`].
pub fn reassemble(patches: &Tensor, l: usize) -> Result<Tensor> {
    let [n, c, ph, pw] = dims4("reassemble", patches)?;
    if l == 0 || n % (l * l) != 0 {
        return Err(Error::shape(
            "reassemble",
            format!("batch {n} is not a multiple of {l}² patches"),
        ));
    }
    let b = n / (l * l);
    patches
        .reshape(&[b, l, l, c, ph, pw])?
        .permute(&[0, 3, 1, 4, 2, 5])?
        .reshape(&[b, c, l * ph, l * pw])
}

/// Patch-major token matrix `[B, N·P, c]` from a `[B, c, H, W]` map.
fn to_tokens(x: &Tensor, l: usize) -> Result<Tensor> {
    let [b, c, h, w] = dims4("head_attention", x)?;
    let n = l * l;
    let p = (h / l) * (w / l);
    partition(x, l)?
        .reshape(&[b, n, c, p])?
        .permute(&[0, 1, 3, 2])?
        .reshape(&[b, n * p, c])
}

fn from_tokens(t: &Tensor, l: usize, c: usize, h: usize, w: usize) -> Result<Tensor> {
    let b = t.shape()[0];
    let n = l * l;
    let (ph, pw) = (h / l, w / l);
    let patches = t
        .reshape(&[b, n, ph * pw, c])?
        .permute(&[0, 1, 3, 2])?
        .reshape(&[b * n, c, ph, pw])?;
    reassemble(&patches, l)
}

/// One head at `l` divisions. With `global_softmax` each query row is
/// normalized over all keys jointly instead of per key patch.
pub fn head_attention(q: &Tensor, k: &Tensor, v: &Tensor, l: usize, global_softmax: bool) -> Result<Tensor> {
    let [b, c, h, w] = dims4("head_attention", q)?;
    for (name, t) in [("k", k), ("v", v)] {
        if t.shape() != q.shape() {
            return Err(Error::shape(
                "head_attention",
                format!("{name} has shape {:?}, q has {:?}", t.shape(), q.shape()),
            ));
        }
    }
    check_division("head_attention", h, w, l)?;
    let tokens = h * w;
    let patch = tokens / (l * l);
    let qt = to_tokens(q, l)?.scale(1.0 / (c as f64).sqrt());
    let kt = to_tokens(k, l)?;
    let vt = to_tokens(v, l)?;
    let scores = qt.matmul(&kt.transpose()?)?;
    let attn = if global_softmax {
        scores.softmax(2)?
    } else {
        scores
            .reshape(&[b, tokens, l * l, patch])?
            .softmax(3)?
            .reshape(&[b, tokens, tokens])?
    };
    from_tokens(&attn.matmul(&vt)?, l, c, h, w)
}

/// Slices Q/K/V per head, attends at each head's scale and concatenates.
pub fn msmhsa_forward(q: &Tensor, k: &Tensor, v: &Tensor, scales: &ScaleSet, global_softmax: bool) -> Result<Tensor> {
    let [_, c, _, _] = dims4("msmhsa", q)?;
    let slices = head_slices(c, scales.head_count())?;
    let heads = slices
        .iter()
        .zip(scales.divisions())
        .map(|(r, l)| {
            let (s, n) = (r.start, r.len());
            head_attention(&q.narrow(1, s, n)?, &k.narrow(1, s, n)?, &v.narrow(1, s, n)?, l, global_softmax)
        })
        .collect::<Result<Vec<_>>>()?;
    if heads.len() == 1 {
        return Ok(heads.into_iter().next().expect("one head"));
    }
    Tensor::concat(&heads, 1)
}
