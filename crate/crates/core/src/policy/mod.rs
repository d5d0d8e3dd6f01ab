//! Deep-Set policy network and reverse mode through the full controller.
//!
//! The network has five feed-forward blocks: `phi_obstacle`/`rho_obstacle`
//! encode the obstacle set, `phi_neighbor`/`rho_neighbor` the neighbor set, and
//! `psi` maps `[rho_obstacle; rho_neighbor; goal]` to the raw action, which is
//! then capped at `pi_max`.

mod io;
pub mod mlp;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geom::Vec2;
use crate::observation::{canonical_cmp, Observation};
use crate::safety::{blend, safe_control, SafetyEval, SafetyParams};
use crate::world::Dynamics;

pub use io::{load_weights, save_weights, WEIGHTS_VERSION};
pub use mlp::{Dense, Mlp, MlpTrace};

/// Hidden and latent widths shared by the five blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub hidden: usize,
    pub latent: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            hidden: 64,
            latent: 16,
        }
    }
}

impl Arch {
    /// Expected layer widths of each named block.
    pub fn block_sizes(&self, dynamics: Dynamics) -> [(&'static str, Vec<usize>); 5] {
        let d = dynamics.state_dim();
        let (h, l) = (self.hidden, self.latent);
        [
            ("phi_obstacle", vec![2, h, l]),
            ("rho_obstacle", vec![l, h, l]),
            ("phi_neighbor", vec![d, h, l]),
            ("rho_neighbor", vec![l, h, l]),
            ("psi", vec![2 * l + d, h, 2]),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyWeights {
    pub dynamics: Dynamics,
    pub phi_obstacle: Mlp,
    pub rho_obstacle: Mlp,
    pub phi_neighbor: Mlp,
    pub rho_neighbor: Mlp,
    pub psi: Mlp,
}

/// Deterministic initialization of every block from one seed.
pub fn init_weights(seed: u64, dynamics: Dynamics, arch: Arch) -> PolicyWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [a, b, c, d, e] = arch.block_sizes(dynamics);
    PolicyWeights {
        dynamics,
        phi_obstacle: Mlp::init(&a.1, &mut rng),
        rho_obstacle: Mlp::init(&b.1, &mut rng),
        phi_neighbor: Mlp::init(&c.1, &mut rng),
        rho_neighbor: Mlp::init(&d.1, &mut rng),
        psi: Mlp::init(&e.1, &mut rng),
    }
}

impl PolicyWeights {
    pub fn arch(&self) -> Arch {
        Arch {
            hidden: self.psi.layers[0].n_out,
            latent: self.rho_obstacle.n_out(),
        }
    }

    pub fn blocks(&self) -> [(&'static str, &Mlp); 5] {
        [
            ("phi_obstacle", &self.phi_obstacle),
            ("rho_obstacle", &self.rho_obstacle),
            ("phi_neighbor", &self.phi_neighbor),
            ("rho_neighbor", &self.rho_neighbor),
            ("psi", &self.psi),
        ]
    }

    fn blocks_mut(&mut self) -> [&mut Mlp; 5] {
        [
            &mut self.phi_obstacle,
            &mut self.rho_obstacle,
            &mut self.phi_neighbor,
            &mut self.rho_neighbor,
            &mut self.psi,
        ]
    }

    /// Same shapes, all parameters zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            dynamics: self.dynamics,
            phi_obstacle: self.phi_obstacle.zeros_like(),
            rho_obstacle: self.rho_obstacle.zeros_like(),
            phi_neighbor: self.phi_neighbor.zeros_like(),
            rho_neighbor: self.rho_neighbor.zeros_like(),
            psi: self.psi.zeros_like(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.params().map(<[f64]>::len).sum()
    }

    /// Parameter slices in a fixed order.
    pub fn params(&self) -> impl Iterator<Item = &[f64]> {
        self.blocks().into_iter().flat_map(|(_, m)| m.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.blocks_mut().into_iter().flat_map(|m| m.params_mut())
    }

    /// Adds `scale * other` to every parameter.
    pub fn add_scaled(&mut self, other: &PolicyWeights, scale: f64) {
        for (dst, src) in self.params_mut().zip(other.params()) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += scale * b;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for p in self.params_mut() {
            for a in p.iter_mut() {
                *a *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.iter().all(|x| x.is_finite()))
    }
}

/// Recorded forward pass of the network.
#[derive(Clone, Debug)]
pub struct PiTape {
    obstacle_traces: Vec<MlpTrace>,
    rho_obstacle: MlpTrace,
    neighbor_traces: Vec<MlpTrace>,
    rho_neighbor: MlpTrace,
    psi: MlpTrace,
    /// Raw network output before the `pi_max` cap.
    pub pi_raw: Vec2,
    pub pi: Vec2,
    pi_max: f64,
}

/// Tape for one evaluation of the full controller `u(o)`.
#[derive(Clone, Debug)]
pub struct GradientTape {
    pub pi: PiTape,
    pub eval: SafetyEval,
    pub u: Vec2,
}

fn neighbor_inputs(obs: &Observation) -> Vec<Vec<f64>> {
    let mut v: Vec<Vec<f64>> = obs
        .neighbors
        .iter()
        .map(|n| match obs.dynamics {
            Dynamics::Single => n.position.to_array().to_vec(),
            Dynamics::Double => vec![n.position.x, n.position.y, n.velocity.x, n.velocity.y],
        })
        .collect();
    v.sort_by(|a, b| canonical_cmp(a, b));
    v
}

fn obstacle_inputs(obs: &Observation) -> Vec<Vec<f64>> {
    let mut v: Vec<Vec<f64>> = obs
        .obstacles
        .iter()
        .map(|o| o.to_array().to_vec())
        .collect();
    v.sort_by(|a, b| canonical_cmp(a, b));
    v
}

fn goal_input(obs: &Observation) -> Vec<f64> {
    match obs.dynamics {
        Dynamics::Single => obs.goal.to_array().to_vec(),
        Dynamics::Double => vec![
            obs.goal.x,
            obs.goal.y,
            obs.goal_velocity.x,
            obs.goal_velocity.y,
        ],
    }
}

/// Sums `phi(x)` over the set in canonical order, returning the traces.
fn deep_set_sum(phi: &Mlp, inputs: &[Vec<f64>]) -> (Vec<MlpTrace>, Vec<f64>) {
    let mut sum = vec![0.0; phi.n_out()];
    let traces: Vec<MlpTrace> = inputs
        .iter()
        .map(|x| {
            let t = phi.forward_trace(x);
            for (s, y) in sum.iter_mut().zip(t.output()) {
                *s += y;
            }
            t
        })
        .collect();
    (traces, sum)
}

/// Network output with its tape. Set elements are summed in a canonical order,
/// which makes the output bit-identical under any permutation of the lists.
pub fn forward_pi_tape(obs: &Observation, w: &PolicyWeights, pi_max: f64) -> PiTape {
    let (obstacle_traces, sum_o) = deep_set_sum(&w.phi_obstacle, &obstacle_inputs(obs));
    let rho_obstacle = w.rho_obstacle.forward_trace(&sum_o);
    let (neighbor_traces, sum_v) = deep_set_sum(&w.phi_neighbor, &neighbor_inputs(obs));
    let rho_neighbor = w.rho_neighbor.forward_trace(&sum_v);

    let mut x = Vec::with_capacity(w.psi.n_in());
    x.extend_from_slice(rho_obstacle.output());
    x.extend_from_slice(rho_neighbor.output());
    x.extend_from_slice(&goal_input(obs));
    let psi = w.psi.forward_trace(&x);
    let out = psi.output();
    let pi_raw = Vec2::new(out[0], out[1]);
    PiTape {
        obstacle_traces,
        rho_obstacle,
        neighbor_traces,
        rho_neighbor,
        psi,
        pi_raw,
        pi: pi_raw.clamp_norm(pi_max),
        pi_max,
    }
}

/// `pi(o)`, capped so that its norm never exceeds `pi_max`.
pub fn forward_pi(obs: &Observation, w: &PolicyWeights, pi_max: f64) -> Vec2 {
    forward_pi_tape(obs, w, pi_max).pi
}

/// Reverse pass through the network for an output adjoint `dpi`.
pub fn backward_pi(tape: &PiTape, w: &PolicyWeights, dpi: Vec2, grad: &mut PolicyWeights) {
    backward_pi_with_raw(tape, w, dpi, Vec2::ZERO, grad);
}

/// [`backward_pi`] with an extra adjoint on the uncapped output `pi_raw`.
pub fn backward_pi_with_raw(
    tape: &PiTape,
    w: &PolicyWeights,
    dpi: Vec2,
    draw_extra: Vec2,
    grad: &mut PolicyWeights,
) {
    let n = tape.pi_raw.norm();
    let draw = if n > tape.pi_max {
        // d/dx (c x / |x|) = c/|x| (I - x x^T / |x|^2)
        let dir = tape.pi_raw / n;
        (dpi - dir * dir.dot(dpi)) * (tape.pi_max / n)
    } else {
        dpi
    } + draw_extra;
    let latent = w.rho_obstacle.n_out();
    let mut dx = vec![0.0; w.psi.n_in()];
    w.psi
        .backward(&tape.psi, &draw.to_array(), &mut grad.psi, Some(&mut dx));

    let mut dsum = vec![0.0; latent];
    w.rho_obstacle.backward(
        &tape.rho_obstacle,
        &dx[..latent],
        &mut grad.rho_obstacle,
        Some(&mut dsum),
    );
    for t in &tape.obstacle_traces {
        w.phi_obstacle
            .backward(t, &dsum, &mut grad.phi_obstacle, None);
    }

    let mut dsum = vec![0.0; latent];
    w.rho_neighbor.backward(
        &tape.rho_neighbor,
        &dx[latent..2 * latent],
        &mut grad.rho_neighbor,
        Some(&mut dsum),
    );
    for t in &tape.neighbor_traces {
        w.phi_neighbor
            .backward(t, &dsum, &mut grad.phi_neighbor, None);
    }
}

/// Full controller `u = alpha * pi + (1 - alpha) * b` with its tape. The
/// robot's own velocity is read from the observation's goal-velocity block.
pub fn forward_controller(
    obs: &Observation,
    w: &PolicyWeights,
    params: &SafetyParams,
) -> Result<GradientTape> {
    let pi = forward_pi_tape(obs, w, params.pi_max);
    let eval = safe_control(obs, pi.pi, params)?;
    let (u, _) = blend(pi.pi, &eval, params);
    Ok(GradientTape { pi, eval, u })
}

/// Adjoint of the learned action given the adjoint of `u`.
///
/// `du/dpi = alpha I + (pi - b) dalpha/dpi^T`; the barrier action itself has
/// no learnable parameters.
pub fn controller_pi_adjoint(tape: &GradientTape, du: Vec2) -> Vec2 {
    let e = &tape.eval;
    du * e.alpha + e.dalpha_dpi * (tape.pi.pi - e.b).dot(du)
}

/// Reverse pass through the full controller.
pub fn backward_controller(
    tape: &GradientTape,
    w: &PolicyWeights,
    du: Vec2,
    grad: &mut PolicyWeights,
) {
    backward_pi(&tape.pi, w, controller_pi_adjoint(tape, du), grad);
}
