#![allow(dead_code)]

use polqed::SystemParams;
use proptest::prelude::*;

/// Parameter sets around the two dots, small truncation.
pub fn params(n_fock: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = SystemParams> {
    (
        (20.0..200.0f64, 0.0..30.0f64, 0.0..30.0f64, 0.2..8.0f64, 0.0..8.0f64),
        (-4.0..4.0f64, -4.0..4.0f64, -4.0..4.0f64, -1.0..1.0f64, -1.0..1.0f64),
        (0.01..0.3f64, 0.0..180.0f64, n_fock),
    )
        .prop_map(
            |((kappa, g_x, g_y, gamma_par, gamma_star), (fx, fy, fl, cx, cy), (drive, theta_in, n_fock))| {
                SystemParams {
                    kappa,
                    g_x,
                    g_y,
                    gamma_par,
                    gamma_star,
                    f_qd_x: fx,
                    f_qd_y: fy,
                    f_laser: fl,
                    f_cav_x: cx,
                    f_cav_y: cy,
                    eta: drive * kappa,
                    theta_in,
                    n_fock,
                    ..SystemParams::qd_a()
                }
            },
        )
}

/// Uncoupled dots: the cavity field is a coherent state.
pub fn empty_cavity(p: &SystemParams) -> SystemParams {
    SystemParams {
        g_x: 0.0,
        g_y: 0.0,
        ..p.clone()
    }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
