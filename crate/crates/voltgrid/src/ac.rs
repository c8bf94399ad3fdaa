//! Polar-form AC network equations shared by the power-flow solver and the
//! optimal reactive dispatch: complex power injections, the analytic
//! Jacobian, and the exact weighted second-derivative assembly.

use crate::network::AdmittanceMatrix;
use nalgebra::DMatrix;

/// Computes per-bus injections
/// `P_i = V_i sum_k V_k (G_ik cos t_ik + B_ik sin t_ik)` and
/// `Q_i = V_i sum_k V_k (G_ik sin t_ik - B_ik cos t_ik)`, `t_ik = va_i - va_k`.
pub(crate) fn injections(y: &AdmittanceMatrix, vm: &[f64], va: &[f64], p: &mut [f64], q: &mut [f64]) {
    for i in 0..y.n {
        let mut pi = 0.0;
        let mut qi = 0.0;
        for &(k, yik) in y.row(i) {
            let (g, b) = (yik.re, yik.im);
            let t = va[i] - va[k];
            let (s, c) = t.sin_cos();
            pi += vm[k] * (g * c + b * s);
            qi += vm[k] * (g * s - b * c);
        }
        p[i] = vm[i] * pi;
        q[i] = vm[i] * qi;
    }
}

/// Row/column layout for Jacobian assembly. P rows come first (one per bus
/// listed in `rows_p`, in order), then Q rows. Column indices are absolute
/// positions in the target matrix, `None` for buses whose angle or
/// magnitude is not a variable.
pub(crate) struct JacobianLayout<'a> {
    pub rows_p: &'a [usize],
    pub rows_q: &'a [usize],
    pub col_th: &'a [Option<usize>],
    pub col_vm: &'a [Option<usize>],
}

/// Fills the d(P,Q)/d(theta, V) entries of `jac` (pre-zeroed) using the
/// standard polar-form expressions; `p_inj`/`q_inj` are current injections.
pub(crate) fn fill_jacobian(
    y: &AdmittanceMatrix,
    vm: &[f64],
    va: &[f64],
    p_inj: &[f64],
    q_inj: &[f64],
    layout: &JacobianLayout,
    jac: &mut DMatrix<f64>,
) {
    let np = layout.rows_p.len();
    for (r, &i) in layout.rows_p.iter().enumerate() {
        for &(k, yik) in y.row(i) {
            let (g, b) = (yik.re, yik.im);
            if k == i {
                if let Some(c) = layout.col_th[i] {
                    jac[(r, c)] = -q_inj[i] - b * vm[i] * vm[i];
                }
                if let Some(c) = layout.col_vm[i] {
                    jac[(r, c)] = p_inj[i] / vm[i] + g * vm[i];
                }
            } else {
                let t = va[i] - va[k];
                let (s, c0) = t.sin_cos();
                if let Some(c) = layout.col_th[k] {
                    jac[(r, c)] = vm[i] * vm[k] * (g * s - b * c0);
                }
                if let Some(c) = layout.col_vm[k] {
                    jac[(r, c)] = vm[i] * (g * c0 + b * s);
                }
            }
        }
    }
    for (rq, &i) in layout.rows_q.iter().enumerate() {
        let r = np + rq;
        for &(k, yik) in y.row(i) {
            let (g, b) = (yik.re, yik.im);
            if k == i {
                if let Some(c) = layout.col_th[i] {
                    jac[(r, c)] = p_inj[i] - g * vm[i] * vm[i];
                }
                if let Some(c) = layout.col_vm[i] {
                    jac[(r, c)] = q_inj[i] / vm[i] - b * vm[i];
                }
            } else {
                let t = va[i] - va[k];
                let (s, c0) = t.sin_cos();
                if let Some(c) = layout.col_th[k] {
                    jac[(r, c)] = -vm[i] * vm[k] * (g * c0 + b * s);
                }
                if let Some(c) = layout.col_vm[k] {
                    jac[(r, c)] = vm[i] * (g * s - b * c0);
                }
            }
        }
    }
}

/// Accumulates the exact Hessian of `sum_i wp_i P_i(V, theta) + wq_i Q_i`
/// into `h` over the (theta, V) variable columns. Used for the Lagrangian
/// curvature of the power-balance equalities.
///
/// Pairwise terms of the injections are `a = V_i V_k A` and `b = V_i V_k B`
/// with `A = G c + B s`, `B = G s - B c`; their derivatives close under
/// `dA/dt = -B`, `dB/dt = A`, which the expressions below exploit.
pub(crate) fn add_weighted_injection_hessian(
    y: &AdmittanceMatrix,
    vm: &[f64],
    va: &[f64],
    wp: &[f64],
    wq: &[f64],
    col_th: &[Option<usize>],
    col_vm: &[Option<usize>],
    h: &mut DMatrix<f64>,
) {
    let add = |h: &mut DMatrix<f64>, r: Option<usize>, c: Option<usize>, v: f64| {
        if v == 0.0 {
            return;
        }
        if let (Some(r), Some(c)) = (r, c) {
            h[(r, c)] += v;
            if r != c {
                h[(c, r)] += v;
            }
        }
    };
    for i in 0..y.n {
        let (wpi, wqi) = (wp[i], wq[i]);
        if wpi == 0.0 && wqi == 0.0 {
            continue;
        }
        for &(k, yik) in y.row(i) {
            let (g, b) = (yik.re, yik.im);
            if k == i {
                add(h, col_vm[i], col_vm[i], wpi * 2.0 * g - wqi * 2.0 * b);
                continue;
            }
            let t = va[i] - va[k];
            let (s, c0) = t.sin_cos();
            let big_a = g * c0 + b * s;
            let big_b = g * s - b * c0;
            let (vi, vk) = (vm[i], vm[k]);
            let a = vi * vk * big_a;
            let bb = vi * vk * big_b;
            // theta-theta block: d2a = -a / +a / -a, d2b likewise in b.
            let tt = -(wpi * a + wqi * bb);
            add(h, col_th[i], col_th[i], tt);
            add(h, col_th[k], col_th[k], tt);
            add(h, col_th[i], col_th[k], -tt);
            // V-theta blocks: dA/dt = -B gives the mixed terms.
            let vi_thi = wpi * (-vk * big_b) + wqi * (vk * big_a);
            add(h, col_vm[i], col_th[i], vi_thi);
            add(h, col_vm[i], col_th[k], -vi_thi);
            let vk_thi = wpi * (-vi * big_b) + wqi * (vi * big_a);
            add(h, col_vm[k], col_th[i], vk_thi);
            add(h, col_vm[k], col_th[k], -vk_thi);
            // V-V cross term; pure V second derivatives of pair terms vanish.
            add(h, col_vm[i], col_vm[k], wpi * big_a + wqi * big_b);
        }
    }
}
