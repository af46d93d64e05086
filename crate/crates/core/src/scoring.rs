//! Similarity heads, pairing probability and binary cross-entropy.

use crate::error::{check_dims, Error, Result};
use crate::numkit::{dot_unchecked, matvec, matvec_transposed, norm, sigmoid, Matrix};

/// Norm below which cosine similarity is defined as 0 with zero gradient.
pub const COSINE_NORM_FLOOR: f64 = 1e-12;
/// Probability clamp used inside the loss only.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Dot,
    Cosine,
    Polynomial,
    Bilinear,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Dot => "dot",
            HeadKind::Cosine => "cosine",
            HeadKind::Polynomial => "polynomial",
            HeadKind::Bilinear => "bilinear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dot" => Some(HeadKind::Dot),
            "cosine" => Some(HeadKind::Cosine),
            "polynomial" | "poly" => Some(HeadKind::Polynomial),
            "bilinear" => Some(HeadKind::Bilinear),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimilarityHead {
    Dot,
    Cosine,
    /// `Σ_{d=0}^{max_degree} (⟨u,r⟩ + offset)^d`, the `d = 0` term being 1.
    Polynomial { max_degree: u32, offset: f64 },
    /// `⟨M u, r⟩` with trainable square `M`.
    Bilinear { m: Matrix },
}

impl SimilarityHead {
    pub fn polynomial() -> Self {
        SimilarityHead::Polynomial {
            max_degree: 3,
            offset: 0.0,
        }
    }

    pub fn bilinear_identity(dim: usize) -> Self {
        SimilarityHead::Bilinear {
            m: Matrix::identity(dim),
        }
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            SimilarityHead::Dot => HeadKind::Dot,
            SimilarityHead::Cosine => HeadKind::Cosine,
            SimilarityHead::Polynomial { .. } => HeadKind::Polynomial,
            SimilarityHead::Bilinear { .. } => HeadKind::Bilinear,
        }
    }

    pub fn similarity(&self, u: &[f64], r: &[f64]) -> Result<f64> {
        match self {
            SimilarityHead::Dot => sim_dot(u, r),
            SimilarityHead::Cosine => sim_cosine(u, r),
            SimilarityHead::Polynomial { max_degree, offset } => {
                sim_polynomial_general(u, r, *max_degree, *offset)
            }
            SimilarityHead::Bilinear { m } => sim_bilinear(u, m, r),
        }
    }

    /// Gradients of `upstream · sim(u, r)`.
    pub fn backward(&self, u: &[f64], r: &[f64], upstream: f64) -> Result<HeadGrads> {
        check_dims("similarity", u.len(), r.len())?;
        let scaled = |v: &[f64], a: f64| v.iter().map(|x| a * x).collect::<Vec<_>>();
        Ok(match self {
            SimilarityHead::Dot => HeadGrads {
                du: scaled(r, upstream),
                dr: scaled(u, upstream),
                dm: None,
            },
            SimilarityHead::Cosine => {
                let (nu, nr) = (norm(u), norm(r));
                if nu < COSINE_NORM_FLOOR || nr < COSINE_NORM_FLOOR {
                    return Ok(HeadGrads {
                        du: vec![0.0; u.len()],
                        dr: vec![0.0; r.len()],
                        dm: None,
                    });
                }
                let cos = dot_unchecked(u, r) / (nu * nr);
                let du = u
                    .iter()
                    .zip(r)
                    .map(|(ui, ri)| upstream * (ri / (nu * nr) - cos * ui / (nu * nu)))
                    .collect();
                let dr = r
                    .iter()
                    .zip(u)
                    .map(|(ri, ui)| upstream * (ui / (nu * nr) - cos * ri / (nr * nr)))
                    .collect();
                HeadGrads { du, dr, dm: None }
            }
            SimilarityHead::Polynomial { max_degree, offset } => {
                let x = dot_unchecked(u, r) + offset;
                let mut deriv = 0.0;
                let mut pow = 1.0; // x^(d-1)
                for d in 1..=*max_degree {
                    deriv += f64::from(d) * pow;
                    pow *= x;
                }
                let a = upstream * deriv;
                HeadGrads {
                    du: scaled(r, a),
                    dr: scaled(u, a),
                    dm: None,
                }
            }
            SimilarityHead::Bilinear { m } => {
                let mut dm = Matrix::zeros(m.rows(), m.cols());
                dm.add_outer(upstream, r, u)?;
                HeadGrads {
                    du: scaled(&matvec_transposed(m, r)?, upstream),
                    dr: scaled(&matvec(m, u)?, upstream),
                    dm: Some(dm),
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub du: Vec<f64>,
    pub dr: Vec<f64>,
    pub dm: Option<Matrix>,
}

pub fn sim_dot(u: &[f64], r: &[f64]) -> Result<f64> {
    check_dims("sim_dot", u.len(), r.len())?;
    Ok(dot_unchecked(u, r))
}

pub fn sim_cosine(u: &[f64], r: &[f64]) -> Result<f64> {
    check_dims("sim_cosine", u.len(), r.len())?;
    let (nu, nr) = (norm(u), norm(r));
    if nu < COSINE_NORM_FLOOR || nr < COSINE_NORM_FLOOR {
        return Ok(0.0);
    }
    Ok(dot_unchecked(u, r) / (nu * nr))
}

/// Degrees 0 through 3 with no offset.
pub fn sim_polynomial(u: &[f64], r: &[f64]) -> Result<f64> {
    sim_polynomial_general(u, r, 3, 0.0)
}

pub fn sim_polynomial_general(u: &[f64], r: &[f64], max_degree: u32, offset: f64) -> Result<f64> {
    check_dims("sim_polynomial", u.len(), r.len())?;
    let x = dot_unchecked(u, r) + offset;
    let mut sum = 0.0;
    let mut pow = 1.0;
    for _ in 0..=max_degree {
        sum += pow;
        pow *= x;
    }
    Ok(sum)
}

pub fn sim_bilinear(u: &[f64], m: &Matrix, r: &[f64]) -> Result<f64> {
    if m.rows() != m.cols() {
        return Err(Error::DimMismatch {
            op: "sim_bilinear square",
            left: m.rows(),
            right: m.cols(),
        });
    }
    check_dims("sim_bilinear r", m.rows(), r.len())?;
    Ok(dot_unchecked(&matvec(m, u)?, r))
}

/// How the logit `sim + b` maps to the pairing probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Link {
    /// `p = σ(sim + b)`
    #[default]
    Standard,
    /// `p = 1 / (1 + e^(sim + b))`, decreasing in sim. Kept for literal
    /// reproduction experiments.
    Negated,
}

impl Link {
    pub fn name(self) -> &'static str {
        match self {
            Link::Standard => "standard",
            Link::Negated => "negated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "standard" => Some(Link::Standard),
            "negated" => Some(Link::Negated),
            _ => None,
        }
    }

    pub fn probability(self, logit: f64) -> f64 {
        match self {
            Link::Standard => sigmoid(logit),
            Link::Negated => sigmoid(-logit),
        }
    }

    /// `∂L/∂logit` for BCE composed with this link.
    pub fn logit_grad(self, p: f64, q: f64) -> f64 {
        match self {
            Link::Standard => p - q,
            Link::Negated => q - p,
        }
    }

    /// Orientation under which a higher score means a better match.
    pub fn rank_sign(self) -> f64 {
        match self {
            Link::Standard => 1.0,
            Link::Negated => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOutput {
    pub sim: f64,
    pub logit: f64,
    pub p: f64,
}

impl ScoreOutput {
    pub fn new(sim: f64, bias: f64, link: Link) -> Self {
        let logit = sim + bias;
        ScoreOutput {
            sim,
            logit,
            p: link.probability(logit),
        }
    }
}

/// `σ(sim + b)`
pub fn probability(sim: f64, b: f64) -> f64 {
    sigmoid(sim + b)
}

pub fn bce_loss(p: f64, q: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let loss = -q * p.ln() - (1.0 - q) * (1.0 - p).ln();
    // rounding can leave -0.0 or a tiny negative; NaN must pass through
    if loss < 0.0 {
        0.0
    } else {
        loss
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrads {
    pub output: ScoreOutput,
    pub loss: f64,
    pub d_logit: f64,
    pub du: Vec<f64>,
    pub dr: Vec<f64>,
    pub db: f64,
    pub dm: Option<Matrix>,
}

/// Loss and gradients of `bce(link(sim(u, r) + b), q)`.
pub fn score_grads(head: &SimilarityHead, u: &[f64], r: &[f64], b: f64, q: f64, link: Link) -> Result<ScoreGrads> {
    let sim = head.similarity(u, r)?;
    let output = ScoreOutput::new(sim, b, link);
    let d_logit = link.logit_grad(output.p, q);
    let hg = head.backward(u, r, d_logit)?;
    Ok(ScoreGrads {
        output,
        loss: bce_loss(output.p, q),
        d_logit,
        du: hg.du,
        dr: hg.dr,
        db: d_logit,
        dm: hg.dm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;
    use proptest::prelude::*;

    #[test]
    fn dot_examples() {
        assert_eq!(sim_dot(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        assert_eq!(sim_dot(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 0.0);
        let g = SimilarityHead::Dot.backward(&[1.0, 2.0], &[3.0, 4.0], 1.0).unwrap();
        assert_eq!(g.du, vec![3.0, 4.0]);
        assert!(sim_dot(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(sim_cosine(&[3.0, 0.0], &[0.0, 4.0]).unwrap(), 0.0);
        assert_eq!(sim_cosine(&[2.0, 0.0], &[5.0, 0.0]).unwrap(), 1.0);
        let v = sim_cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(sim_cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        let g = SimilarityHead::Cosine.backward(&[0.0, 0.0], &[1.0, 0.0], 1.0).unwrap();
        assert!(g.du.iter().chain(&g.dr).all(|&v| v == 0.0));
    }

    #[test]
    fn polynomial_examples() {
        assert_eq!(sim_polynomial(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(sim_polynomial(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 4.0);
        assert_eq!(sim_polynomial(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 15.0);
        assert_eq!(sim_polynomial_general(&[1.0], &[1.0], 0, 0.0).unwrap(), 1.0);
        assert_eq!(sim_polynomial_general(&[1.0], &[1.0], 2, 1.0).unwrap(), 7.0);
    }

    #[test]
    fn bilinear_examples() {
        let mut rng = Rng::new(4);
        let u = rng.uniform(-1.0, 1.0, 3).unwrap();
        let r = rng.uniform(-1.0, 1.0, 3).unwrap();
        assert_eq!(sim_bilinear(&u, &Matrix::identity(3), &r).unwrap(), sim_dot(&u, &r).unwrap());
        assert_eq!(sim_bilinear(&u, &Matrix::zeros(3, 3), &r).unwrap(), 0.0);
        assert!(sim_bilinear(&u, &Matrix::zeros(2, 3), &r).is_err());
    }

    #[test]
    fn probability_examples() {
        assert_eq!(probability(0.0, 0.0), 0.5);
        assert!((probability(3f64.ln(), 0.0) - 0.75).abs() < 1e-15);
        assert!((probability(1.0, 0.3) + probability(-1.0, -0.3) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bce_examples() {
        assert!(bce_loss(1.0, 1.0).abs() < 1e-11);
        assert!((bce_loss(0.5, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert!((bce_loss(0.5, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert!(bce_loss(0.0, 1.0).is_finite());
    }

    #[test]
    fn fused_logit_grad() {
        for head in all_heads(3) {
            let g = score_grads(&head, &[0.1, 0.2, 0.3], &[0.3, -0.1, 0.2], 0.4, 1.0, Link::Standard).unwrap();
            assert_eq!(g.db, g.output.p - 1.0);
        }
    }

    #[test]
    fn optimum_gives_zero_grads() {
        // p = 0.5 exactly with q = 0.5 is the only exact optimum reachable in floats
        let g = score_grads(&SimilarityHead::Dot, &[0.0, 0.0], &[1.0, 2.0], 0.0, 0.5, Link::Standard).unwrap();
        assert_eq!(g.db, 0.0);
        assert!(g.du.iter().chain(&g.dr).all(|&v| v == 0.0));
    }

    #[test]
    fn negated_link_reverses_orientation() {
        let out = ScoreOutput::new(2.0, 0.0, Link::Negated);
        assert!(out.p < 0.5);
        assert_eq!(Link::Negated.logit_grad(0.3, 1.0), 0.7);
    }

    fn all_heads(s: usize) -> Vec<SimilarityHead> {
        let mut rng = Rng::new(77);
        vec![
            SimilarityHead::Dot,
            SimilarityHead::Cosine,
            SimilarityHead::polynomial(),
            SimilarityHead::Bilinear {
                m: Matrix::random_uniform(s, s, -1.0, 1.0, &mut rng).unwrap(),
            },
        ]
    }

    fn loss_of(head: &SimilarityHead, u: &[f64], r: &[f64], b: f64, q: f64) -> f64 {
        let out = ScoreOutput::new(head.similarity(u, r).unwrap(), b, Link::Standard);
        bce_loss(out.p, q)
    }

    #[test]
    fn score_grads_match_finite_differences() {
        let s = 5;
        let eps = 1e-6;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
        let mut rng = Rng::new(31);
        for head in all_heads(s) {
            for trial in 0..5 {
                let mut u = rng.uniform(-0.5, 0.5, s).unwrap();
                let mut r = rng.uniform(-0.5, 0.5, s).unwrap();
                let b = rng.uniform(-0.5, 0.5, 1).unwrap()[0];
                let q = (trial % 2) as f64;
                let g = score_grads(&head, &u, &r, b, q, Link::Standard).unwrap();
                let mut worst = 0.0f64;
                for i in 0..s {
                    let o = u[i];
                    u[i] = o + eps;
                    let lp = loss_of(&head, &u, &r, b, q);
                    u[i] = o - eps;
                    let lm = loss_of(&head, &u, &r, b, q);
                    u[i] = o;
                    worst = worst.max(rel(g.du[i], (lp - lm) / (2.0 * eps)));
                    let o = r[i];
                    r[i] = o + eps;
                    let lp = loss_of(&head, &u, &r, b, q);
                    r[i] = o - eps;
                    let lm = loss_of(&head, &u, &r, b, q);
                    r[i] = o;
                    worst = worst.max(rel(g.dr[i], (lp - lm) / (2.0 * eps)));
                }
                let fd_b = (loss_of(&head, &u, &r, b + eps, q) - loss_of(&head, &u, &r, b - eps, q)) / (2.0 * eps);
                worst = worst.max(rel(g.db, fd_b));
                if let (SimilarityHead::Bilinear { m }, Some(dm)) = (&head, &g.dm) {
                    for idx in 0..s * s {
                        let mut mp = m.clone();
                        mp.as_mut_slice()[idx] += eps;
                        let mut mm = m.clone();
                        mm.as_mut_slice()[idx] -= eps;
                        let lp = loss_of(&SimilarityHead::Bilinear { m: mp }, &u, &r, b, q);
                        let lm = loss_of(&SimilarityHead::Bilinear { m: mm }, &u, &r, b, q);
                        worst = worst.max(rel(dm.as_slice()[idx], (lp - lm) / (2.0 * eps)));
                    }
                }
                assert!(worst < 1e-6, "{:?}: {worst}", head.kind());
            }
        }
    }

    proptest! {
        #[test]
        fn cosine_bounded_and_scale_invariant(
            pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..12),
            alpha in 0.01f64..100.0,
            beta in 0.01f64..100.0,
        ) {
            let (u, r): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assume!(norm(&u) > 1e-6 && norm(&r) > 1e-6);
            let c = sim_cosine(&u, &r).unwrap();
            prop_assert!(c.abs() <= 1.0 + 1e-12);
            let us: Vec<f64> = u.iter().map(|v| alpha * v).collect();
            let rs: Vec<f64> = r.iter().map(|v| beta * v).collect();
            prop_assert!((sim_cosine(&us, &rs).unwrap() - c).abs() <= 1e-12);
        }

        #[test]
        fn bilinear_identity_is_dot(pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..12)) {
            let (u, r): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let m = Matrix::identity(u.len());
            prop_assert_eq!(sim_bilinear(&u, &m, &r).unwrap(), sim_dot(&u, &r).unwrap());
        }

        #[test]
        fn logit_grad_is_p_minus_q(sim in -20.0f64..20.0, b in -5.0f64..5.0, q in 0u8..2) {
            let q = f64::from(q);
            let out = ScoreOutput::new(sim, b, Link::Standard);
            prop_assert!((Link::Standard.logit_grad(out.p, q) - (out.p - q)).abs() <= 1e-15);
        }

        #[test]
        fn bce_nonnegative(p in 0.0f64..=1.0, q in 0u8..2) {
            prop_assert!(bce_loss(p, f64::from(q)) >= 0.0);
        }

        #[test]
        fn probability_is_monotone(a in -30.0f64..30.0, d in 0.0f64..5.0, b in -3.0f64..3.0) {
            prop_assert!(probability(a + d, b) >= probability(a, b));
        }
    }
}
