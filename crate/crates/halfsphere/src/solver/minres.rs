//! MINRES for symmetric (possibly indefinite) systems, matrix-free.
//!
//! The Newton systems of the subcritical solve are symmetric in the
//! volume-scaled inner product but indefinite near a mountain-pass point
//! (one negative direction), which rules out plain CG.

/// Solve `A x = b` for symmetric `A` given as a mat-vec closure. Returns
/// the approximate solution and the achieved relative residual.
pub fn minres<F: FnMut(&[f64], &mut [f64])>(
    mut apply: F,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let n = b.len();
    let norm_b = norm(b);
    if norm_b == 0.0 {
        return (vec![0.0; n], 0.0);
    }
    let mut x = vec![0.0; n];

    // Lanczos vectors
    let mut v_prev = vec![0.0; n];
    let mut v = b.to_vec();
    let mut beta = norm_b;
    scale(&mut v, 1.0 / beta);

    // QR of the tridiagonal via Givens rotations
    let (mut c_prev, mut s_prev) = (1.0, 0.0);
    let (mut c, mut s) = (1.0, 0.0);
    let mut w_prev = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut eta = beta;
    let mut relres = 1.0;

    let mut av = vec![0.0; n];
    for _ in 0..max_iter {
        // Lanczos step
        apply(&v, &mut av);
        let alpha = dot(&v, &av);
        for i in 0..n {
            av[i] -= alpha * v[i] + beta * v_prev[i];
        }
        let beta_next = norm(&av);

        // previous rotations applied to the new column (alpha, beta_next)
        let delta = c * alpha - c_prev * s * beta;
        let rho2 = s * alpha + c_prev * c * beta;
        let rho3 = s_prev * beta;
        // new rotation annihilating beta_next
        let rho1 = (delta * delta + beta_next * beta_next).sqrt();
        let (c_next, s_next) = if rho1 > 0.0 {
            (delta / rho1, beta_next / rho1)
        } else {
            (1.0, 0.0)
        };

        // update direction w
        let mut w_next = vec![0.0; n];
        for i in 0..n {
            w_next[i] = (v[i] - rho2 * w[i] - rho3 * w_prev[i]) / rho1.max(1e-300);
        }
        // update solution
        let step = c_next * eta;
        for i in 0..n {
            x[i] += step * w_next[i];
        }
        eta = -s_next * eta;
        relres = eta.abs() / norm_b;
        if relres < tol {
            break;
        }

        // shift
        std::mem::swap(&mut v_prev, &mut v);
        std::mem::swap(&mut v, &mut av);
        if beta_next > 0.0 {
            scale(&mut v, 1.0 / beta_next);
        } else {
            break;
        }
        beta = beta_next;
        c_prev = c;
        s_prev = s;
        c = c_next;
        s = s_next;
        std::mem::swap(&mut w_prev, &mut w);
        std::mem::swap(&mut w, &mut w_next);
    }
    (x, relres)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn scale(a: &mut [f64], f: f64) {
    for x in a {
        *x *= f;
    }
}
