//! Informative patch selection and cross-granularity feature enhancement.
//!
//! Fine patch features first attend to the motion-aligned historical queries
//! (`F_q = softmax(F_p Q̂ᵀ/√C) Q̂`). Each resulting row is L2-normalized, its
//! squared components are read as a distribution over channels, and patches
//! whose entropy exceeds the scene mean are selected. Selected fine indices
//! are projected to the coarse grid, and the selected coarse tokens gather
//! detail from the selected fine tokens through position-aware cross
//! attention with a residual: `F_l' = F_l + softmax(pos(F_l) pos(F_n)ᵀ/√C) F_n`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::embedding::{project_fine_to_coarse, PatchGridSpec};
use crate::error::{Error, Result};
use crate::geometry::{horizontal_depth, RigidTransform, Vec3};
use crate::numerics::{l2_normalize_rows, matmul, matmul_at, matmul_bt, softmax_rows, Matrix};

/// Clamp applied inside the entropy logarithm.
pub const ENTROPY_EPS: f64 = 1e-12;

/// Object queries carried between frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySet {
    pub embeddings: Matrix,
    pub positions: Vec<Vec3>,
    pub depths: Vec<f64>,
}

impl QuerySet {
    /// Depths are derived from the positions.
    pub fn new(embeddings: Matrix, positions: Vec<Vec3>) -> Result<Self> {
        if embeddings.rows() != positions.len() {
            return Err(Error::invalid(
                "QuerySet::new",
                format!(
                    "{} embeddings for {} positions",
                    embeddings.rows(),
                    positions.len()
                ),
            ));
        }
        let depths = positions.iter().map(|&p| horizontal_depth(p)).collect();
        Ok(Self {
            embeddings,
            positions,
            depths,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Moves historical queries into the current ego frame. Embeddings are
/// carried over unchanged.
pub fn align_queries(prev: &QuerySet, ego_motion: &RigidTransform) -> QuerySet {
    let positions: Vec<Vec3> = prev.positions.iter().map(|&p| ego_motion.to_current(p)).collect();
    let depths = positions.iter().map(|&p| horizontal_depth(p)).collect();
    QuerySet {
        embeddings: prev.embeddings.clone(),
        positions,
        depths,
    }
}

/// Scaled dot-product attention `softmax(q kᵀ / √C) v`, also returning the
/// attention weights for the backward pass.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<(Matrix, Matrix)> {
    if q.cols() != k.cols() {
        return Err(Error::ShapeMismatch {
            op: "attention(q, k)",
            left: q.shape(),
            right: k.shape(),
        });
    }
    if k.rows() != v.rows() {
        return Err(Error::ShapeMismatch {
            op: "attention(k, v)",
            left: k.shape(),
            right: v.shape(),
        });
    }
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let probs = softmax_rows(&matmul_bt(q, k)?.scale(scale));
    let out = matmul(&probs, v)?;
    Ok((out, probs))
}

/// Gradients of [`attention`] with respect to `q`, `k` and `v`.
pub struct AttentionGrads {
    pub dq: Matrix,
    pub dk: Matrix,
    pub dv: Matrix,
}

pub fn attention_backward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    probs: &Matrix,
    d_out: &Matrix,
) -> Result<AttentionGrads> {
    if d_out.rows() != q.rows() || d_out.cols() != v.cols() {
        return Err(Error::ShapeMismatch {
            op: "attention_backward",
            left: (q.rows(), v.cols()),
            right: d_out.shape(),
        });
    }
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let dv = matmul_at(probs, d_out)?;
    let d_probs = matmul_bt(d_out, v)?;
    // softmax Jacobian: dS = A ⊙ (dA − rowsum(dA ⊙ A))
    let mut d_scores = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let a = probs.row(r);
        let da = d_probs.row(r);
        let inner: f64 = a.iter().zip(da).map(|(x, y)| x * y).sum();
        for (o, (x, y)) in d_scores.row_mut(r).iter_mut().zip(a.iter().zip(da)) {
            *o = x * (y - inner) * scale;
        }
    }
    let dq = matmul(&d_scores, k)?;
    let dk = matmul_at(&d_scores, q)?;
    Ok(AttentionGrads { dq, dk, dv })
}

/// `softmax(F_p Q̂ᵀ / √C) Q̂`.
pub fn temporal_enhance(f_p: &Matrix, q_hat: &Matrix) -> Result<Matrix> {
    if q_hat.rows() == 0 {
        return Err(Error::invalid("temporal_enhance", "no queries"));
    }
    Ok(attention(f_p, q_hat, q_hat)?.0)
}

/// Gradients of `⟨upstream, temporal_enhance(f_p, q_hat)⟩`.
pub struct TemporalGrads {
    pub d_f_p: Matrix,
    pub d_q_hat: Matrix,
}

pub fn temporal_enhance_grad(f_p: &Matrix, q_hat: &Matrix, upstream: &Matrix) -> Result<TemporalGrads> {
    let (_, probs) = attention(f_p, q_hat, q_hat)?;
    let g = attention_backward(f_p, q_hat, q_hat, &probs, upstream)?;
    Ok(TemporalGrads {
        d_f_p: g.dq,
        d_q_hat: g.dk.add(&g.dv)?,
    })
}

/// Per-row entropy of the squared L2-normalized features.
///
/// `H_j = −Σ_c max(p_c, ε) ln max(p_c, ε)` with `p_c = F̃²_{j,c}`; all-zero
/// rows score 0.
pub fn entropy_scores(f_q: &Matrix) -> Vec<f64> {
    let normalized = l2_normalize_rows(f_q);
    (0..normalized.rows())
        .map(|r| {
            let row = normalized.row(r);
            if row.iter().all(|&v| v == 0.0) {
                return 0.0;
            }
            -row.iter()
                .map(|v| {
                    let p = (v * v).max(ENTROPY_EPS);
                    p * p.ln()
                })
                .sum::<f64>()
        })
        .collect()
}

/// Selected fine patches and their coarse counterparts.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SelectionMask {
    pub fine_indices: Vec<usize>,
    pub coarse_indices: Vec<usize>,
    pub entropies: Vec<f64>,
    pub mean_entropy: f64,
}

impl SelectionMask {
    pub fn is_empty(&self) -> bool {
        self.fine_indices.is_empty()
    }

    /// Fills `coarse_indices` with the deduplicated projections of the fine selection.
    pub fn project(&mut self, fine: &PatchGridSpec, coarse: &PatchGridSpec) -> Result<()> {
        let mut set = BTreeSet::new();
        for &i in &self.fine_indices {
            set.insert(project_fine_to_coarse(i, fine, coarse)?);
        }
        self.coarse_indices = set.into_iter().collect();
        Ok(())
    }
}

/// Indices whose entropy is strictly above the mean. The coarse side is left
/// empty; see [`SelectionMask::project`].
pub fn adaptive_select(entropies: &[f64]) -> SelectionMask {
    if entropies.is_empty() {
        return SelectionMask::default();
    }
    let mean = entropies.iter().sum::<f64>() / entropies.len() as f64;
    SelectionMask {
        fine_indices: entropies
            .iter()
            .enumerate()
            .filter(|(_, &h)| h > mean)
            .map(|(i, _)| i)
            .collect(),
        coarse_indices: Vec::new(),
        entropies: entropies.to_vec(),
        mean_entropy: mean,
    }
}

fn check_cgfe_shapes(f_l: &Matrix, f_n: &Matrix, pe_l: &Matrix, pe_n: &Matrix) -> Result<()> {
    if f_l.rows() == 0 || f_n.rows() == 0 {
        return Err(Error::invalid("cgfe", "empty selection; skip enhancement instead"));
    }
    if pe_l.shape() != f_l.shape() {
        return Err(Error::ShapeMismatch {
            op: "cgfe(f_l, pe_l)",
            left: f_l.shape(),
            right: pe_l.shape(),
        });
    }
    if pe_n.shape() != f_n.shape() {
        return Err(Error::ShapeMismatch {
            op: "cgfe(f_n, pe_n)",
            left: f_n.shape(),
            right: pe_n.shape(),
        });
    }
    if f_l.cols() != f_n.cols() {
        return Err(Error::ShapeMismatch {
            op: "cgfe(f_l, f_n)",
            left: f_l.shape(),
            right: f_n.shape(),
        });
    }
    Ok(())
}

/// `F_l + softmax((F_l + PE_l)(F_n + PE_n)ᵀ / √C) F_n`.
pub fn cgfe(f_l: &Matrix, f_n: &Matrix, pe_l: &Matrix, pe_n: &Matrix) -> Result<Matrix> {
    check_cgfe_shapes(f_l, f_n, pe_l, pe_n)?;
    let (f_e, _) = attention(&f_l.add(pe_l)?, &f_n.add(pe_n)?, f_n)?;
    f_l.add(&f_e)
}

pub struct CgfeGrads {
    pub d_f_l: Matrix,
    pub d_f_n: Matrix,
}

/// Gradients of `⟨upstream, cgfe(f_l, f_n, pe_l, pe_n)⟩` with respect to the
/// coarse and fine features.
pub fn cgfe_grad(
    f_l: &Matrix,
    f_n: &Matrix,
    pe_l: &Matrix,
    pe_n: &Matrix,
    upstream: &Matrix,
) -> Result<CgfeGrads> {
    check_cgfe_shapes(f_l, f_n, pe_l, pe_n)?;
    if upstream.shape() != f_l.shape() {
        return Err(Error::ShapeMismatch {
            op: "cgfe_grad",
            left: f_l.shape(),
            right: upstream.shape(),
        });
    }
    let q = f_l.add(pe_l)?;
    let k = f_n.add(pe_n)?;
    let (_, probs) = attention(&q, &k, f_n)?;
    let g = attention_backward(&q, &k, f_n, &probs, upstream)?;
    Ok(CgfeGrads {
        d_f_l: upstream.add(&g.dq)?,
        d_f_n: g.dk.add(&g.dv)?,
    })
}

/// One line of a selection dump.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskRecord {
    pub frame: usize,
    pub view: usize,
    pub fine: Vec<usize>,
    pub coarse: Vec<usize>,
}

pub const MASK_HEADER: &str = "# frame\tview\tfine\tcoarse";

/// Tab-separated dump, one record per line after [`MASK_HEADER`]; index
/// lists are comma-separated and `-` marks an empty list.
pub fn write_mask_records(records: &[MaskRecord]) -> String {
    let list = |v: &[usize]| {
        if v.is_empty() {
            "-".to_string()
        } else {
            v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
        }
    };
    let mut out = String::from(MASK_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", r.frame, r.view, list(&r.fine), list(&r.coarse));
    }
    out
}

pub fn parse_mask_records(text: &str) -> Result<Vec<MaskRecord>> {
    let err = |line: usize, reason: String| Error::Parse {
        path: "<selection masks>".into(),
        line,
        reason,
    };
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(err(n + 1, format!("expected 4 fields, found {}", fields.len())));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| err(n + 1, format!("bad integer {s:?}")));
        let list = |s: &str| -> Result<Vec<usize>> {
            if s == "-" {
                Ok(Vec::new())
            } else {
                s.split(',').map(num).collect()
            }
        };
        out.push(MaskRecord {
            frame: num(fields[0])?,
            view: num(fields[1])?,
            fine: list(fields[2])?,
            coarse: list(fields[3])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::grid_for;
    use crate::numerics::{finite_diff_check, DEFAULT_FD_STEP};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_m(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::random_uniform(r, c, -1.0, 1.0, rng)
    }

    fn naive_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Matrix {
        let c = q.cols() as f64;
        let mut out = Matrix::zeros(q.rows(), v.cols());
        for i in 0..q.rows() {
            let logits: Vec<f64> = (0..k.rows())
                .map(|j| (0..q.cols()).map(|d| q[(i, d)] * k[(j, d)]).sum::<f64>() / c.sqrt())
                .collect();
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = w.iter().sum();
            for j in 0..k.rows() {
                for d in 0..v.cols() {
                    out[(i, d)] += w[j] / z * v[(j, d)];
                }
            }
        }
        out
    }

    #[test]
    fn align_queries_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let positions = vec![[10.0, 0.0, 0.5], [25.0, 0.0, -1.0], [3.0, 4.0, 0.0]];
        let q = QuerySet::new(rand_m(&mut rng, 3, 4), positions).unwrap();
        assert_eq!(align_queries(&q, &RigidTransform::identity()), q);

        let fwd = RigidTransform::from_yaw_translation(0.0, [1.5, 0.0, 0.0]);
        let moved = align_queries(&q, &fwd);
        assert_eq!(moved.depths[0], q.depths[0] - 1.5);
        assert_eq!(moved.depths[1], q.depths[1] - 1.5);
        assert_eq!(moved.embeddings, q.embeddings);
    }

    #[test]
    fn align_queries_matches_homogeneous_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let yaw = rng.gen_range(-3.0..3.0);
            let t = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-1.0..1.0)];
            let motion = RigidTransform::from_yaw_translation(yaw, t);
            // 4×4 pose of the current frame in the previous one, inverted by Gauss-Jordan.
            let (s, c) = yaw.sin_cos();
            let pose = [
                [c, -s, 0.0, t[0]],
                [s, c, 0.0, t[1]],
                [0.0, 0.0, 1.0, t[2]],
                [0.0, 0.0, 0.0, 1.0],
            ];
            let inv = invert4(pose);
            let pts: Vec<Vec3> = (0..5)
                .map(|_| [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-2.0..2.0)])
                .collect();
            let q = QuerySet::new(Matrix::zeros(5, 4), pts.clone()).unwrap();
            let aligned = align_queries(&q, &motion);
            for (p, got) in pts.iter().zip(&aligned.positions) {
                let h = [p[0], p[1], p[2], 1.0];
                for r in 0..3 {
                    let want: f64 = (0..4).map(|k| inv[r][k] * h[k]).sum();
                    assert!((want - got[r]).abs() < 1e-9);
                }
            }
        }
    }

    fn invert4(m: [[f64; 4]; 4]) -> [[f64; 4]; 4] {
        let mut a = m;
        let mut inv = [[0.0; 4]; 4];
        for (i, row) in inv.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for col in 0..4 {
            let pivot = (col..4).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
            a.swap(col, pivot);
            inv.swap(col, pivot);
            let d = a[col][col];
            for k in 0..4 {
                a[col][k] /= d;
                inv[col][k] /= d;
            }
            for r in 0..4 {
                if r != col {
                    let f = a[r][col];
                    for k in 0..4 {
                        a[r][k] -= f * a[col][k];
                        inv[r][k] -= f * inv[col][k];
                    }
                }
            }
        }
        inv
    }

    #[test]
    fn temporal_enhance_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f_p = rand_m(&mut rng, 7, 8);
        let single = rand_m(&mut rng, 1, 8);
        let out = temporal_enhance(&f_p, &single).unwrap();
        for r in 0..7 {
            assert_eq!(out.row(r), single.row(0));
        }
        let v: Vec<f64> = (0..8).map(|i| i as f64 * 0.25 - 1.0).collect();
        let same = Matrix::from_rows(&vec![v.clone(); 5]).unwrap();
        let out = temporal_enhance(&f_p, &same).unwrap();
        for r in 0..7 {
            for (a, b) in out.row(r).iter().zip(&v) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        let q = rand_m(&mut rng, 6, 8);
        let fast = temporal_enhance(&f_p, &q).unwrap();
        let slow = naive_attention(&f_p, &q, &q);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(temporal_enhance(&f_p, &rand_m(&mut rng, 3, 5)).is_err());
    }

    #[test]
    fn temporal_enhance_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f_p = rand_m(&mut rng, 6, 8);
        let q = rand_m(&mut rng, 4, 8);
        let up = rand_m(&mut rng, 6, 8);
        let g = temporal_enhance_grad(&f_p, &q, &up).unwrap();
        let e1 = finite_diff_check(
            |x| temporal_enhance(x, &q).unwrap().dot(&up).unwrap(),
            &g.d_f_p,
            &f_p,
            DEFAULT_FD_STEP,
        )
        .unwrap();
        let e2 = finite_diff_check(
            |x| temporal_enhance(&f_p, x).unwrap().dot(&up).unwrap(),
            &g.d_q_hat,
            &q,
            DEFAULT_FD_STEP,
        )
        .unwrap();
        assert!(e1 <= 1e-4 && e2 <= 1e-4, "{e1} {e2}");
    }

    #[test]
    fn entropy_examples() {
        let m = Matrix::from_rows(&[
            vec![0.0, 3.0, 0.0, 0.0],
            vec![2.0, 2.0, 2.0, 2.0],
            vec![0.0, 0.0, 0.0, 0.0],
        ])
        .unwrap();
        let h = entropy_scores(&m);
        assert!(h[0].abs() < 1e-9);
        assert!((h[1] - 4f64.ln()).abs() < 1e-12);
        assert_eq!(h[2], 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let row: Vec<f64> = (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let want: f64 = -row
            .iter()
            .map(|v| {
                let p = ((v / norm) * (v / norm)).max(1e-12);
                p * p.ln()
            })
            .sum::<f64>();
        let got = entropy_scores(&Matrix::from_rows(&[row]).unwrap())[0];
        assert!((got - want).abs() < 1e-10);
    }

    #[test]
    fn adaptive_select_examples() {
        let m = adaptive_select(&[1.0, 2.0, 3.0]);
        assert_eq!(m.fine_indices, vec![2]);
        assert_eq!(m.mean_entropy, 2.0);
        assert!(adaptive_select(&[0.7; 10]).is_empty());

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..3.0)).collect();
        let mean = h.iter().sum::<f64>() / 50.0;
        let mut want = Vec::new();
        for (i, &v) in h.iter().enumerate() {
            if v > mean {
                want.push(i);
            }
        }
        assert_eq!(adaptive_select(&h).fine_indices, want);
    }

    #[test]
    fn selection_projection_is_consistent() {
        let fine = grid_for(64, 96, 16);
        let coarse = grid_for(64, 96, 20);
        let mut m = adaptive_select(&(0..fine.tokens()).map(|i| (i % 7) as f64).collect::<Vec<_>>());
        m.project(&fine, &coarse).unwrap();
        assert!(m.coarse_indices.windows(2).all(|w| w[0] < w[1]));
        for &c in &m.coarse_indices {
            let (cr, cc) = (c / coarse.cols, c % coarse.cols);
            let hit = m.fine_indices.iter().any(|&f| {
                let (fr, fc) = (f / fine.cols, f % fine.cols);
                let (y, x) = ((fr as f64 + 0.5) * 16.0, (fc as f64 + 0.5) * 16.0);
                let inside = |v: f64, lo: usize, n: usize| {
                    v >= (lo * 20) as f64 && (v < ((lo + 1) * 20) as f64 || lo + 1 == n)
                };
                inside(y, cr, coarse.rows) && inside(x, cc, coarse.cols)
            });
            assert!(hit, "coarse {c} has no selected fine patch inside it");
        }
    }

    #[test]
    fn cgfe_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (kc, c) = (5, 8);
        let f_l = rand_m(&mut rng, kc, c);
        let pe_l = rand_m(&mut rng, kc, c);
        let f_n1 = rand_m(&mut rng, 1, c);
        let pe_n1 = rand_m(&mut rng, 1, c);
        let out = cgfe(&f_l, &f_n1, &pe_l, &pe_n1).unwrap();
        for r in 0..kc {
            for d in 0..c {
                assert!((out[(r, d)] - (f_l[(r, d)] + f_n1[(0, d)])).abs() < 1e-15);
            }
        }
        let zeros = Matrix::zeros(4, c);
        let pe_n = rand_m(&mut rng, 4, c);
        assert_eq!(cgfe(&f_l, &zeros, &pe_l, &pe_n).unwrap(), f_l);

        let f_n = rand_m(&mut rng, 6, c);
        let pe_n = rand_m(&mut rng, 6, c);
        let fast = cgfe(&f_l, &f_n, &pe_l, &pe_n).unwrap();
        let q = f_l.add(&pe_l).unwrap();
        let k = f_n.add(&pe_n).unwrap();
        let slow = f_l.add(&naive_attention(&q, &k, &f_n)).unwrap();
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(cgfe(&f_l, &Matrix::zeros(0, c), &pe_l, &Matrix::zeros(0, c)).is_err());
    }

    #[test]
    fn cgfe_grad_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (kc, c) = (4, 6);
        let f_l = rand_m(&mut rng, kc, c);
        let pe_l = rand_m(&mut rng, kc, c);
        let f_n = rand_m(&mut rng, 5, c);
        let pe_n = rand_m(&mut rng, 5, c);
        let g = cgfe_grad(&f_l, &f_n, &pe_l, &pe_n, &Matrix::zeros(kc, c)).unwrap();
        assert_eq!(g.d_f_l.max_abs(), 0.0);
        assert_eq!(g.d_f_n.max_abs(), 0.0);

        let up = rand_m(&mut rng, kc, c);
        let f_n1 = rand_m(&mut rng, 1, c);
        let pe_n1 = rand_m(&mut rng, 1, c);
        let g = cgfe_grad(&f_l, &f_n1, &pe_l, &pe_n1, &up).unwrap();
        for d in 0..c {
            let colsum: f64 = (0..kc).map(|r| up[(r, d)]).sum();
            assert!((g.d_f_n[(0, d)] - colsum).abs() < 1e-12);
        }

        let g = cgfe_grad(&f_l, &f_n, &pe_l, &pe_n, &up).unwrap();
        let e1 = finite_diff_check(
            |x| cgfe(x, &f_n, &pe_l, &pe_n).unwrap().dot(&up).unwrap(),
            &g.d_f_l,
            &f_l,
            DEFAULT_FD_STEP,
        )
        .unwrap();
        let e2 = finite_diff_check(
            |x| cgfe(&f_l, x, &pe_l, &pe_n).unwrap().dot(&up).unwrap(),
            &g.d_f_n,
            &f_n,
            DEFAULT_FD_STEP,
        )
        .unwrap();
        assert!(e1 <= 1e-4 && e2 <= 1e-4, "{e1} {e2}");
        assert!(cgfe_grad(&f_l, &f_n, &pe_l, &pe_n, &Matrix::zeros(1, c)).is_err());
    }

    #[test]
    fn mask_records_round_trip() {
        let recs = vec![
            MaskRecord { frame: 0, view: 1, fine: vec![1, 5, 9], coarse: vec![0, 3] },
            MaskRecord { frame: 2, view: 0, fine: vec![], coarse: vec![] },
        ];
        let text = write_mask_records(&recs);
        assert!(text.starts_with(MASK_HEADER));
        assert_eq!(parse_mask_records(&text).unwrap(), recs);
        assert!(parse_mask_records("1\t2\tx\t-\n").is_err());
    }

    proptest! {
        #[test]
        fn temporal_output_in_convex_hull(seed in any::<u64>(), n in 1usize..10, m in 1usize..10, c in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f_p = Matrix::random_uniform(n, c, -3.0, 3.0, &mut rng);
            let q = Matrix::random_uniform(m, c, -3.0, 3.0, &mut rng);
            let out = temporal_enhance(&f_p, &q).unwrap();
            for d in 0..c {
                let lo = (0..m).map(|j| q[(j, d)]).fold(f64::INFINITY, f64::min);
                let hi = (0..m).map(|j| q[(j, d)]).fold(f64::NEG_INFINITY, f64::max);
                for r in 0..n {
                    prop_assert!(out[(r, d)] >= lo - 1e-12 && out[(r, d)] <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn entropy_scale_invariant_and_bounded(seed in any::<u64>(), n in 1usize..8, c in 1usize..20, k in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = Matrix::random_uniform(n, c, -1.0, 1.0, &mut rng);
            let h = entropy_scores(&m);
            let hs = entropy_scores(&m.scale(k));
            for (a, b) in h.iter().zip(&hs) {
                prop_assert!((a - b).abs() < 1e-10);
                prop_assert!(*a >= 0.0 && *a <= (c as f64).ln() + 1e-9);
            }
        }

        #[test]
        fn selection_scale_invariant(h in prop::collection::vec(0.0f64..5.0, 1..60), k in 0.1f64..10.0) {
            let scaled: Vec<f64> = h.iter().map(|v| v * k).collect();
            let a = adaptive_select(&h);
            let b = adaptive_select(&scaled);
            for &i in &a.fine_indices {
                prop_assert!(h[i] > a.mean_entropy);
            }
            // Multiplying by k rescales the mean by k up to rounding; only
            // entries within rounding of the mean could flip.
            let flips: Vec<usize> = a.fine_indices.iter().copied()
                .filter(|i| !b.fine_indices.contains(i))
                .chain(b.fine_indices.iter().copied().filter(|i| !a.fine_indices.contains(i)))
                .collect();
            for i in flips {
                prop_assert!((h[i] - a.mean_entropy).abs() <= 1e-12 * a.mean_entropy.abs().max(1.0));
            }
        }

        #[test]
        fn cgfe_zero_values_is_identity(seed in any::<u64>(), kc in 1usize..6, kf in 1usize..6, c in 1usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f_l = Matrix::random_uniform(kc, c, -2.0, 2.0, &mut rng);
            let pe_l = Matrix::random_uniform(kc, c, -1.0, 1.0, &mut rng);
            let pe_n = Matrix::random_uniform(kf, c, -1.0, 1.0, &mut rng);
            prop_assert_eq!(cgfe(&f_l, &Matrix::zeros(kf, c), &pe_l, &pe_n).unwrap(), f_l);
        }
    }
}
