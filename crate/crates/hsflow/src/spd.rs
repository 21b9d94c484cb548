//! Geometry of the symmetric space of positive-definite symmetric 3x3
//! matrices with the invariant metric <A, B>_P = tr(P^-1 A P^-1 B): norms of
//! matrix-valued derivatives, the harmonic map Laplacian and the pullback
//! connection entering the Bochner terms.

use nalgebra::Matrix3;

use crate::algebra::{sym4_index, Spd3, Sym3, Sym4};
use crate::error::Result;

/// Christoffel symbols of the base 4-metric, Gamma[c][a][b] = Gamma^c_ab.
pub type Christoffel4 = [[[f64; 4]; 4]; 4];

pub const ZERO_CHRISTOFFEL: Christoffel4 = [[[0.0; 4]; 4]; 4];

/// Pointwise 2-jet of the map Q together with the base metric data.
#[derive(Clone, Copy, Debug)]
pub struct QJet {
    pub q: Spd3,
    /// First derivatives d_a Q.
    pub dq: [Sym3; 4],
    /// Second derivatives d_a d_b Q, symmetric in (a, b), upper-triangle
    /// storage indexed by [`sym4_index`].
    pub d2q: [Sym3; 10],
    /// Inverse of the base 4-metric at the point.
    pub ginv: Sym4,
}

/// Invariant inner product <A, B>_P = tr(P^-1 A P^-1 B).
pub fn p_inner(p: &Spd3, a: &Sym3, b: &Sym3) -> Result<f64> {
    let pinv = p.inverse()?.to_matrix();
    Ok(p_inner_with_inv(&pinv, a, b))
}

/// Same as [`p_inner`] with the inverse base point precomputed.
pub fn p_inner_with_inv(pinv: &Matrix3<f64>, a: &Sym3, b: &Sym3) -> f64 {
    (pinv * a.to_matrix() * pinv * b.to_matrix()).trace()
}

/// |dQ|^2_Q = g^{ab} <d_a Q, d_b Q>_Q.
pub fn dq_norm_sq(jet: &QJet) -> Result<f64> {
    Ok(trace4(&dq_outer(jet)?, &jet.ginv))
}

/// The symmetric 2-tensor <dQ (x) dQ>_Q with entries <d_a Q, d_b Q>_Q.
pub fn dq_outer(jet: &QJet) -> Result<Sym4> {
    let qinv = jet.q.inverse()?.to_matrix();
    let mut out = [0.0f64; 10];
    for a in 0..4 {
        for b in a..4 {
            out[sym4_index(a, b)] = p_inner_with_inv(&qinv, &jet.dq[a], &jet.dq[b]);
        }
    }
    Ok(Sym4(out))
}

/// g-trace of a symmetric 2-tensor.
pub fn trace4(t: &Sym4, ginv: &Sym4) -> f64 {
    let mut s = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            s += ginv.get(a, b) * t.get(a, b);
        }
    }
    s
}

/// Harmonic map Laplacian
/// (Dhat Q)_ij = Delta(Q_ij) - <dQ_ik Q^{km}, dQ_mj>, with Delta the
/// Laplace-Beltrami operator of the base metric on each component.
pub fn harmonic_laplacian(jet: &QJet, christoffel: &Christoffel4) -> Result<Sym3> {
    let qinv = jet.q.inverse()?.to_matrix();
    let mut acc = Matrix3::<f64>::zeros();
    for a in 0..4 {
        for b in 0..4 {
            let gab = jet.ginv.get(a, b);
            if gab == 0.0 {
                continue;
            }
            // Laplace-Beltrami second-derivative part.
            let mut second = jet.d2q[sym4_index(a, b)].to_matrix();
            for c in 0..4 {
                second -= christoffel[c][a][b] * jet.dq[c].to_matrix();
            }
            // Nonlinear target term dQ_a Q^-1 dQ_b.
            let da = jet.dq[a].to_matrix();
            let db = jet.dq[b].to_matrix();
            acc += gab * (second - da * qinv * db);
        }
    }
    Ok(Sym3::from_matrix(&acc))
}

/// Pullback Levi-Civita connection of the target applied to a Q-tangent
/// field S along direction a:
/// nabla-hat_a S = d_a S - (1/2)(d_a Q Q^-1 S + S Q^-1 d_a Q).
pub fn pullback_connection(q: &Spd3, dq_a: &Sym3, s: &Sym3, ds_a: &Sym3) -> Result<Sym3> {
    let qinv = q.inverse()?.to_matrix();
    let dqm = dq_a.to_matrix();
    let sm = s.to_matrix();
    let out = ds_a.to_matrix() - 0.5 * (dqm * qinv * sm + sm * qinv * dqm);
    Ok(Sym3::from_matrix(&out))
}

/// Second fundamental form components (nabla-hat dQ)_{ab} given the base
/// Christoffels: d_a d_b Q - Gamma^c_ab d_c Q - (1/2)(d_a Q Q^-1 d_b Q +
/// d_b Q Q^-1 d_a Q).
pub fn hessian_hat(jet: &QJet, christoffel: &Christoffel4) -> Result<[Sym3; 10]> {
    let qinv = jet.q.inverse()?.to_matrix();
    let mut out = [Sym3::zero(); 10];
    for a in 0..4 {
        for b in a..4 {
            let mut m = jet.d2q[sym4_index(a, b)].to_matrix();
            for c in 0..4 {
                m -= christoffel[c][a][b] * jet.dq[c].to_matrix();
            }
            let da = jet.dq[a].to_matrix();
            let db = jet.dq[b].to_matrix();
            m -= 0.5 * (da * qinv * db + db * qinv * da);
            out[sym4_index(a, b)] = Sym3::from_matrix(&m);
        }
    }
    Ok(out)
}

/// |nabla-hat dQ|^2_Q with all four base indices contracted by g.
pub fn hessian_hat_norm_sq(jet: &QJet, hess: &[Sym3; 10]) -> Result<f64> {
    let qinv = jet.q.inverse()?.to_matrix();
    let mut s = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let w = jet.ginv.get(a, c) * jet.ginv.get(b, d);
                    if w != 0.0 {
                        s += w * p_inner_with_inv(
                            &qinv,
                            &hess[sym4_index(a, b)],
                            &hess[sym4_index(c, d)],
                        );
                    }
                }
            }
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Sym4;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut impl Rng) -> Spd3 {
        let m = Matrix3::from_fn(|_, _| rng.gen::<f64>() - 0.5);
        let s = m * m.transpose() + Matrix3::identity() * 0.5;
        Sym3::from_matrix(&s)
    }

    fn random_sym(rng: &mut impl Rng) -> Sym3 {
        Sym3(std::array::from_fn(|_| rng.gen::<f64>() - 0.5))
    }

    fn flat_jet(q: Spd3, dq: [Sym3; 4], d2q: [Sym3; 10]) -> QJet {
        QJet {
            q,
            dq,
            d2q,
            ginv: Sym4::identity(),
        }
    }

    #[test]
    fn p_inner_identity_cases() {
        let id = Sym3::identity();
        assert_abs_diff_eq!(p_inner(&id, &id, &id).unwrap(), 3.0, epsilon = 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = random_sym(&mut rng);
            let b = random_sym(&mut rng);
            let tr_ab = (a.to_matrix() * b.to_matrix()).trace();
            assert_abs_diff_eq!(p_inner(&id, &a, &b).unwrap(), tr_ab, epsilon = 1e-13);
        }
    }

    #[test]
    fn p_inner_homogeneity_and_positivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let p = random_spd(&mut rng);
            let a = random_sym(&mut rng);
            let c = 0.3 + rng.gen::<f64>() * 3.0;
            let lhs = p_inner(&p.scale(c), &a.scale(c), &a.scale(c)).unwrap();
            let rhs = p_inner(&p, &a, &a).unwrap();
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10 * (1.0 + rhs.abs()));
            if a.0.iter().any(|x| x.abs() > 1e-12) {
                assert!(rhs > 0.0, "invariant metric must be positive definite");
            }
        }
    }

    #[test]
    fn dq_norm_of_constant_map_is_zero() {
        let jet = flat_jet(Sym3::identity(), [Sym3::zero(); 4], [Sym3::zero(); 10]);
        assert_abs_diff_eq!(dq_norm_sq(&jet).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn dq_norm_of_exponential_diagonal() {
        // Q(x) = diag(e^x, e^-x, 1) along axis 0 with flat base metric:
        // tr(Q^-1 Q' Q^-1 Q') = 1 + 1 + 0 = 2 at every x.
        for x in [-0.7f64, 0.0, 1.3] {
            let q = Sym3([x.exp(), (-x).exp(), 1.0, 0.0, 0.0, 0.0]);
            let mut dq = [Sym3::zero(); 4];
            dq[0] = Sym3([x.exp(), -(-x).exp(), 0.0, 0.0, 0.0, 0.0]);
            let jet = flat_jet(q, dq, [Sym3::zero(); 10]);
            assert_abs_diff_eq!(dq_norm_sq(&jet).unwrap(), 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn dq_norm_congruence_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let q = random_spd(&mut rng);
            let dq: [Sym3; 4] = std::array::from_fn(|_| random_sym(&mut rng));
            let jet = flat_jet(q, dq, [Sym3::zero(); 10]);
            let v0 = dq_norm_sq(&jet).unwrap();

            let g = Matrix3::from_fn(|_, _| rng.gen::<f64>() - 0.5) + Matrix3::identity() * 2.0;
            let tq = Sym3::from_matrix(&(g * q.to_matrix() * g.transpose()));
            let tdq: [Sym3; 4] = std::array::from_fn(|a| {
                Sym3::from_matrix(&(g * dq[a].to_matrix() * g.transpose()))
            });
            let tjet = flat_jet(tq, tdq, [Sym3::zero(); 10]);
            let v1 = dq_norm_sq(&tjet).unwrap();
            assert_abs_diff_eq!(v0, v1, epsilon = 1e-9 * (1.0 + v0.abs()));
        }
    }

    #[test]
    fn harmonic_laplacian_of_constant_is_zero() {
        let jet = flat_jet(Sym3::identity(), [Sym3::zero(); 4], [Sym3::zero(); 10]);
        let l = harmonic_laplacian(&jet, &ZERO_CHRISTOFFEL).unwrap();
        for c in 0..6 {
            assert_abs_diff_eq!(l.0[c], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn geodesics_are_harmonic() {
        // Q(x0) = exp(x0 A) for diagonal A: a one-variable geodesic of the
        // target precomposed with an affine map, so the tension vanishes.
        let a = [0.8f64, -0.3, 0.5];
        for x in [-0.4f64, 0.0, 0.9] {
            let q = Sym3([
                (a[0] * x).exp(),
                (a[1] * x).exp(),
                (a[2] * x).exp(),
                0.0,
                0.0,
                0.0,
            ]);
            let mut dq = [Sym3::zero(); 4];
            dq[0] = Sym3([
                a[0] * (a[0] * x).exp(),
                a[1] * (a[1] * x).exp(),
                a[2] * (a[2] * x).exp(),
                0.0,
                0.0,
                0.0,
            ]);
            let mut d2q = [Sym3::zero(); 10];
            d2q[sym4_index(0, 0)] = Sym3([
                a[0] * a[0] * (a[0] * x).exp(),
                a[1] * a[1] * (a[1] * x).exp(),
                a[2] * a[2] * (a[2] * x).exp(),
                0.0,
                0.0,
                0.0,
            ]);
            let jet = flat_jet(q, dq, d2q);
            let l = harmonic_laplacian(&jet, &ZERO_CHRISTOFFEL).unwrap();
            for c in 0..6 {
                assert_abs_diff_eq!(l.0[c], 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn diagonal_one_variable_formula() {
        // For Q = diag(q1, q2, q3) depending on one flat variable, component i
        // of the tension field is qi'' - (qi')^2 / qi.
        let q = Sym3([1.5, 0.7, 2.1, 0.0, 0.0, 0.0]);
        let qp = [0.3, -0.2, 0.4];
        let qpp = [0.1, 0.5, -0.3];
        let mut dq = [Sym3::zero(); 4];
        dq[1] = Sym3([qp[0], qp[1], qp[2], 0.0, 0.0, 0.0]);
        let mut d2q = [Sym3::zero(); 10];
        d2q[sym4_index(1, 1)] = Sym3([qpp[0], qpp[1], qpp[2], 0.0, 0.0, 0.0]);
        let jet = flat_jet(q, dq, d2q);
        let l = harmonic_laplacian(&jet, &ZERO_CHRISTOFFEL).unwrap();
        for i in 0..3 {
            let expect = qpp[i] - qp[i] * qp[i] / q.0[i];
            assert_abs_diff_eq!(l.0[i], expect, epsilon = 1e-13);
        }
    }

    #[test]
    fn harmonic_laplacian_congruence_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let q = random_spd(&mut rng);
            let dq: [Sym3; 4] = std::array::from_fn(|_| random_sym(&mut rng).scale(0.3));
            let d2q: [Sym3; 10] = std::array::from_fn(|_| random_sym(&mut rng).scale(0.3));
            let jet = flat_jet(q, dq, d2q);
            let l0 = harmonic_laplacian(&jet, &ZERO_CHRISTOFFEL).unwrap();

            let g = Matrix3::from_fn(|_, _| rng.gen::<f64>() - 0.5) + Matrix3::identity() * 2.0;
            let tr = |s: &Sym3| Sym3::from_matrix(&(g * s.to_matrix() * g.transpose()));
            let tjet = flat_jet(
                tr(&q),
                std::array::from_fn(|a| tr(&dq[a])),
                std::array::from_fn(|i| tr(&d2q[i])),
            );
            let l1 = harmonic_laplacian(&tjet, &ZERO_CHRISTOFFEL).unwrap();
            let expect = tr(&l0);
            for c in 0..6 {
                assert_abs_diff_eq!(l1.0[c], expect.0[c], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn dq_outer_trace_and_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let q = random_spd(&mut rng);
            let dq: [Sym3; 4] = std::array::from_fn(|_| random_sym(&mut rng));
            let jet = flat_jet(q, dq, [Sym3::zero(); 10]);
            let outer = dq_outer(&jet).unwrap();
            let tr = trace4(&outer, &jet.ginv);
            assert_abs_diff_eq!(tr, dq_norm_sq(&jet).unwrap(), epsilon = 1e-11 * (1.0 + tr));
            // Gram matrix of vectors in an inner-product space.
            let eigs = outer.to_matrix().symmetric_eigenvalues();
            for e in eigs.iter() {
                assert!(*e >= -1e-11 * (1.0 + tr.abs()));
            }
        }
    }

    #[test]
    fn axis_relabel_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = random_spd(&mut rng);
        let dq: [Sym3; 4] = std::array::from_fn(|_| random_sym(&mut rng));
        let d2q: [Sym3; 10] = std::array::from_fn(|_| random_sym(&mut rng));
        let jet = flat_jet(q, dq, d2q);
        let v0 = dq_norm_sq(&jet).unwrap();
        let l0 = harmonic_laplacian(&jet, &ZERO_CHRISTOFFEL).unwrap();

        // Swap axes 1 and 3 everywhere (flat metric is permutation invariant).
        let perm = [0usize, 3, 2, 1];
        let pdq: [Sym3; 4] = std::array::from_fn(|a| dq[perm[a]]);
        let mut pd2q = [Sym3::zero(); 10];
        for a in 0..4 {
            for b in a..4 {
                pd2q[sym4_index(a, b)] = d2q[sym4_index(perm[a], perm[b])];
            }
        }
        let pjet = flat_jet(q, pdq, pd2q);
        assert_abs_diff_eq!(dq_norm_sq(&pjet).unwrap(), v0, epsilon = 1e-12);
        let l1 = harmonic_laplacian(&pjet, &ZERO_CHRISTOFFEL).unwrap();
        for c in 0..6 {
            assert_abs_diff_eq!(l1.0[c], l0.0[c], epsilon = 1e-12);
        }
    }
}
