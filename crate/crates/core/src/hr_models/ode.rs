use crate::autodiff::{Tape, Var};

/// One classical RK4 step of `dg/dt = d − g` with `d` held over the step.
pub fn rk4_step(tape: &mut Tape, g: Var, d: Var, dt: f64) -> Var {
    let k1 = tape.sub(d, g);
    let h1 = tape.scale(k1, dt / 2.0);
    let g2 = tape.add(g, h1);
    let k2 = tape.sub(d, g2);
    let h2 = tape.scale(k2, dt / 2.0);
    let g3 = tape.add(g, h2);
    let k3 = tape.sub(d, g3);
    let h3 = tape.scale(k3, dt);
    let g4 = tape.add(g, h3);
    let k4 = tape.sub(d, g4);
    let k23 = tape.add(k2, k3);
    let k23 = tape.scale(k23, 2.0);
    let k14 = tape.add(k1, k4);
    let incr = tape.add(k14, k23);
    let incr = tape.scale(incr, dt / 6.0);
    tape.add(g, incr)
}

/// Trajectory `[g₀, g₁, …, g_T]` for demands `d₀ … d_{T−1}`; step `t`
/// integrates from `t` to `t + 1` under `d_t`.
pub fn ode_integrate(tape: &mut Tape, demands: &[Var], g0: Var, dt: f64) -> Vec<Var> {
    let mut out = Vec::with_capacity(demands.len() + 1);
    out.push(g0);
    let mut g = g0;
    for d in demands {
        g = rk4_step(tape, g, *d, dt);
        out.push(g);
    }
    out
}
