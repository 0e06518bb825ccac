//! Multichannel geometric operators: the relation extractor and the message
//! scaler, as direct matrix functions and as tape-recorded edge batches.

use std::sync::Arc;

use numcore::{Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::structio::MAX_CHANNELS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeomConfig {
    pub channels: usize,
    pub attr_dim: usize,
    pub eps: f64,
}

impl Default for GeomConfig {
    fn default() -> Self {
        Self {
            channels: MAX_CHANNELS,
            attr_dim: 16,
            eps: 1e-8,
        }
    }
}

impl GeomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels != MAX_CHANNELS {
            return Err(Error::config(format!("channel count is fixed at {MAX_CHANNELS}")));
        }
        if self.attr_dim == 0 || !(self.eps > 0.0) {
            return Err(Error::config("attr_dim must be positive and eps > 0"));
        }
        Ok(())
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

/// `R = A_iᵀ D A_j` with `D(p, q) = |X_i(p) - X_j(q)|` over occupied
/// channels; `a_i` has one attribute row per channel of `x_i`. Returns the
/// `d × d` matrix row-major.
pub fn relation_extract(x_i: &[[f64; 3]], x_j: &[[f64; 3]], a_i: &[Vec<f64>], a_j: &[Vec<f64>]) -> Result<Vec<f64>> {
    if x_i.is_empty() || x_j.is_empty() {
        return Err(Error::input("relation_extract needs at least one channel per node"));
    }
    if a_i.len() != x_i.len() || a_j.len() != x_j.len() {
        return Err(Error::input("one attribute row per channel is required"));
    }
    let d = a_i[0].len();
    if a_i.iter().chain(a_j).any(|r| r.len() != d) {
        return Err(Error::input("attribute rows differ in width"));
    }
    let mut out = vec![0.0; d * d];
    for (p, xp) in x_i.iter().enumerate() {
        for (q, xq) in x_j.iter().enumerate() {
            let dpq = dist(xp, xq);
            for a in 0..d {
                let w = a_i[p][a] * dpq;
                for b in 0..d {
                    out[a * d + b] += w * a_j[q][b];
                }
            }
        }
    }
    Ok(out)
}

/// Average pooling with window `s.len() - c + 1` and stride 1; the output has
/// exactly `c` entries.
pub fn sliding_mean(s: &[f64], c: usize) -> Result<Vec<f64>> {
    if c == 0 || c > s.len() {
        return Err(Error::input(format!("channel count {c} outside 1..={}", s.len())));
    }
    let w = s.len() - c + 1;
    Ok(s.windows(w).map(|win| win.iter().sum::<f64>() / w as f64).collect())
}

/// `X · diag(s')` where `s'` pools the length-C message `s` down to the
/// channel count of `x`.
pub fn message_scale(x: &[[f64; 3]], s: &[f64]) -> Result<Vec<[f64; 3]>> {
    if s.len() != MAX_CHANNELS {
        return Err(Error::input(format!("message length {} (expected {MAX_CHANNELS})", s.len())));
    }
    let pooled = sliding_mean(s, x.len())?;
    Ok(x.iter().zip(pooled).map(|(p, w)| p.map(|v| v * w)).collect())
}

/// Mean of the occupied columns of `x`.
pub fn masked_centroid(x: &[[f64; 3]], mask: &[bool]) -> Result<[f64; 3]> {
    if mask.len() != x.len() {
        return Err(Error::input("mask length differs from channel count"));
    }
    let n = mask.iter().filter(|m| **m).count();
    if n == 0 {
        return Err(Error::input("masked_centroid: every channel is masked"));
    }
    let mut c = [0.0; 3];
    for (p, _) in x.iter().zip(mask).filter(|(_, m)| **m) {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    Ok(c.map(|v| v / n as f64))
}

/// Per-edge index data shared by every layer of one graph batch.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    /// Element class of each dst / src channel, `[E * C]`.
    pub dst_classes: Arc<[usize]>,
    pub src_classes: Arc<[usize]>,
    /// Occupied channel count of each edge's dst node.
    pub dst_counts: Arc<[usize]>,
}

impl EdgeIndex {
    /// `classes` is `[n * C]` (padding carries any valid class, masked out
    /// by the distances), `counts` the per-node channel counts.
    pub fn new(src: Vec<usize>, dst: Vec<usize>, classes: &[usize], counts: &[usize]) -> Self {
        let gather = |nodes: &[usize]| -> Arc<[usize]> {
            nodes
                .iter()
                .flat_map(|&i| classes[i * MAX_CHANNELS..(i + 1) * MAX_CHANNELS].iter().copied())
                .collect()
        };
        Self {
            dst_classes: gather(&dst),
            src_classes: gather(&src),
            dst_counts: dst.iter().map(|&i| counts[i]).collect(),
            src: src.into(),
            dst: dst.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// Normalized relation features `R / (|R|_F + eps)` flattened to
/// `[E, d_A²]`, with `R = A_dstᵀ D A_src`.
pub fn relation_features<T: Scalar>(
    tape: &mut Tape<T>,
    coords: Var,
    mask: Arc<Vec<bool>>,
    attributes: Var,
    edges: &EdgeIndex,
    eps: T,
) -> Result<Var> {
    let e = edges.len();
    let d_a = tape.shape(attributes)[1];
    let dist = tape.channel_distances(coords, mask, edges.src.clone(), edges.dst.clone())?;
    let a_dst = tape.index_select(attributes, edges.dst_classes.clone())?;
    let a_dst = tape.reshape(a_dst, [e, MAX_CHANNELS, d_a])?;
    let a_src = tape.index_select(attributes, edges.src_classes.clone())?;
    let a_src = tape.reshape(a_src, [e, MAX_CHANNELS, d_a])?;
    let a_dst_t = tape.transpose_last(a_dst)?;
    let left = tape.bmm(a_dst_t, dist)?;
    let r = tape.bmm(left, a_src)?;
    let flat = tape.reshape(r, [e, d_a * d_a])?;
    let norm = tape.l2_norm_last(flat)?;
    let denom = tape.add_scalar(norm, eps)?;
    Ok(tape.div(flat, denom)?)
}

/// Per-node channel centroids `[n, 1, 3]`.
pub fn centroids<T: Scalar>(tape: &mut Tape<T>, coords: Var, mask: &[bool]) -> Result<Var> {
    let n = tape.shape(coords)[0];
    let m: Vec<T> = mask.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
    let m = Tensor::new([n, MAX_CHANNELS, 1], m)?;
    Ok(tape.masked_mean_axis(coords, &m, 1)?)
}

/// Edge messages `T_S(X_dst - centroid_src, s)` as `[E, C, 3]`; channels
/// beyond each dst node's count are exactly zero.
pub fn scaled_messages<T: Scalar>(
    tape: &mut Tape<T>,
    coords: Var,
    centroids: Var,
    scales: Var,
    edges: &EdgeIndex,
) -> Result<Var> {
    let e = edges.len();
    let x_dst = tape.index_select(coords, edges.dst.clone())?;
    let c_src = tape.index_select(centroids, edges.src.clone())?;
    let rel = tape.sub(x_dst, c_src)?;
    let pooled = tape.sliding_channel_mean(scales, edges.dst_counts.clone())?;
    let pooled = tape.reshape(pooled, [e, MAX_CHANNELS, 1])?;
    Ok(tape.mul(rel, pooled)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_points(rng: &mut ChaCha8Rng, c: usize) -> Vec<[f64; 3]> {
        (0..c).map(|_| [0; 3].map(|_| rng.gen_range(-5.0..5.0))).collect()
    }

    #[test]
    fn coincident_single_atoms_give_zero() {
        let a = vec![vec![1.0, 0.0]];
        let r = relation_extract(&[[1.0, 2.0, 3.0]], &[[1.0, 2.0, 3.0]], &a, &a).unwrap();
        assert_eq!(r, vec![0.0; 4]);
    }

    #[test]
    fn single_atoms_at_distance_five() {
        let a = vec![vec![1.0, 0.0, 0.0]];
        let r = relation_extract(&[[0.0; 3]], &[[3.0, 4.0, 0.0]], &a, &a).unwrap();
        let mut expected = vec![0.0; 9];
        expected[0] = 5.0;
        assert_eq!(r, expected);
    }

    #[test]
    fn pooling_windows() {
        let s: Vec<f64> = (0..14).map(|v| v as f64).collect();
        assert_eq!(sliding_mean(&s, 14).unwrap(), s);
        assert_eq!(sliding_mean(&s, 1).unwrap(), vec![6.5]);
        for c in 1..=14 {
            assert_eq!(sliding_mean(&s, c).unwrap().len(), c);
        }
        assert!(sliding_mean(&s, 15).is_err());
        let x = vec![[1.0, -2.0, 3.0]; 5];
        assert_eq!(message_scale(&x, &[1.0; 14]).unwrap(), x);
    }

    #[test]
    fn centroid_cases() {
        assert_eq!(masked_centroid(&[[1.0, 2.0, 3.0]], &[true]).unwrap(), [1.0, 2.0, 3.0]);
        assert_eq!(masked_centroid(&[[1.0, 2.0, 3.0], [-1.0, -2.0, -3.0]], &[true, true]).unwrap(), [0.0; 3]);
        assert_eq!(masked_centroid(&[[1.0, 2.0, 3.0], [9.0, 9.0, 9.0]], &[true, false]).unwrap(), [1.0, 2.0, 3.0]);
        assert!(masked_centroid(&[[0.0; 3]], &[false]).is_err());
    }

    #[test]
    fn tape_features_match_matrix_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d_a = 3;
        let n_classes = 4;
        let attrs: Vec<f64> = (0..n_classes * d_a).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let counts = [3usize, 1, 14];
        let points: Vec<Vec<[f64; 3]>> = counts.iter().map(|&c| rand_points(&mut rng, c)).collect();
        let classes: Vec<usize> = (0..3 * MAX_CHANNELS).map(|_| rng.gen_range(0..n_classes)).collect();
        let mut coords = vec![0.0; 3 * MAX_CHANNELS * 3];
        let mut mask = vec![false; 3 * MAX_CHANNELS];
        for (i, pts) in points.iter().enumerate() {
            for (c, p) in pts.iter().enumerate() {
                coords[(i * MAX_CHANNELS + c) * 3..][..3].copy_from_slice(p);
                mask[i * MAX_CHANNELS + c] = true;
            }
        }
        let src = vec![0, 1, 2, 2, 0];
        let dst = vec![1, 2, 0, 2, 0];
        let edges = EdgeIndex::new(src.clone(), dst.clone(), &classes, &counts);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new([3, MAX_CHANNELS, 3], coords).unwrap());
        let a = tape.leaf(Tensor::new([n_classes, d_a], attrs.clone()).unwrap());
        let feats = relation_features(&mut tape, x, Arc::new(mask.clone()), a, &edges, 1e-8).unwrap();
        let got = tape.value(feats).to_vec();
        for (e, (&j, &i)) in src.iter().zip(&dst).enumerate() {
            let rows = |node: usize| -> Vec<Vec<f64>> {
                (0..counts[node])
                    .map(|c| {
                        let k = classes[node * MAX_CHANNELS + c];
                        attrs[k * d_a..(k + 1) * d_a].to_vec()
                    })
                    .collect()
            };
            let r = relation_extract(&points[i], &points[j], &rows(i), &rows(j)).unwrap();
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-8;
            for (k, v) in r.iter().enumerate() {
                assert!((got[e * d_a * d_a + k] - v / norm).abs() < 1e-12);
            }
        }

        let s: Vec<f64> = (0..src.len() * MAX_CHANNELS).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sv = tape.leaf(Tensor::new([src.len(), MAX_CHANNELS], s.clone()).unwrap());
        let cent = centroids(&mut tape, x, &mask).unwrap();
        let msgs = scaled_messages(&mut tape, x, cent, sv, &edges).unwrap();
        let got = tape.value(msgs).to_vec();
        for (e, (&j, &i)) in src.iter().zip(&dst).enumerate() {
            let c = masked_centroid(&points[j], &vec![true; counts[j]]).unwrap();
            let rel: Vec<[f64; 3]> = points[i].iter().map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]]).collect();
            let want = message_scale(&rel, &s[e * MAX_CHANNELS..(e + 1) * MAX_CHANNELS]).unwrap();
            for ch in 0..MAX_CHANNELS {
                for k in 0..3 {
                    let g = got[(e * MAX_CHANNELS + ch) * 3 + k];
                    if ch < counts[i] {
                        assert!((g - want[ch][k]).abs() < 1e-12);
                    } else {
                        assert_eq!(g, 0.0);
                    }
                }
            }
        }
    }
}
