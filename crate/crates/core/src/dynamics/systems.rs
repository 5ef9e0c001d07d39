//! Built-in benchmark models.
//!
//! Each model reads its physical constants from a [`Constants`] map; the
//! bundled defaults live in `systems/<name>.toml`.

use std::sync::Arc;

use super::{Constants, SystemModel};
use crate::error::{Error, Result};

pub fn build_model(name: &str, c: &Constants) -> Result<Arc<dyn SystemModel>> {
    let model: Arc<dyn SystemModel> = match name {
        "pendulum" => Arc::new(Pendulum::from_constants(c)?),
        "nonaffine_pendulum" => Arc::new(NonaffinePendulum::from_constants(c)?),
        "car_kinematic" => Arc::new(CarKinematic::from_constants(c)?),
        "car_sideslip" => Arc::new(CarSideslip::from_constants(c)?),
        "segway" => Arc::new(Segway::from_constants(c)?),
        "neural_lander" => Arc::new(NeuralLander::from_constants(c)?),
        "quad2d" => Arc::new(Quad2d::from_constants(c)?),
        "quad3d" => Arc::new(Quad3d::from_constants(c)?),
        other => {
            return Err(Error::config("system", format!("unknown system `{other}`")));
        }
    };
    Ok(model)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Ball-and-box style sets shared by several tasks:
/// safe = `lower-bound on a coordinate ∧ ‖x‖ ≤ r_safe`,
/// unsafe = `coordinate beyond a threshold ∨ ‖x‖ ≥ r_unsafe`.
#[derive(Debug, Clone)]
struct NormBoxSets {
    safe_norm: f64,
    unsafe_norm: f64,
}

impl NormBoxSets {
    fn from_constants(c: &Constants) -> Result<Self> {
        Ok(NormBoxSets {
            safe_norm: c.scalar("safe_norm")?,
            unsafe_norm: c.scalar("unsafe_norm")?,
        })
    }
}

/// Inverted pendulum, `x = [θ, θ̇]`, torque input.
#[derive(Debug, Clone)]
pub struct Pendulum {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub safe_theta: f64,
    pub unsafe_theta: f64,
    sets: NormBoxSets,
}

impl Pendulum {
    pub fn from_constants(c: &Constants) -> Result<Self> {
        Ok(Pendulum {
            mass: c.scalar("mass")?,
            length: c.scalar("length")?,
            gravity: c.scalar("gravity")?,
            safe_theta: c.scalar("safe_theta")?,
            unsafe_theta: c.scalar("unsafe_theta")?,
            sets: NormBoxSets::from_constants(c)?,
        })
    }

    fn inertia(&self) -> f64 {
        self.mass * self.length * self.length
    }
}

impl SystemModel for Pendulum {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn eval(&self, _t: f64, x: &[f64], u: &[f64], xdot: &mut [f64]) {
        let inertia = self.inertia();
        xdot[0] = x[1];
        xdot[1] = -self.mass * self.gravity * self.length / inertia * x[0].sin() + u[0] / inertia;
    }
    fn affine_parts(&self, _t: f64, x: &[f64], drift: &mut [f64], input: &mut [f64]) -> Result<()> {
        let inertia = self.inertia();
        drift[0] = x[1];
        drift[1] = -self.mass * self.gravity * self.length / inertia * x[0].sin();
        input[0] = 0.0;
        input[1] = 1.0 / inertia;
        Ok(())
    }
    fn is_safe(&self, x: &[f64]) -> bool {
        x[0].abs() <= self.safe_theta && norm(x) <= self.sets.safe_norm
    }
    fn is_unsafe(&self, x: &[f64]) -> bool {
        x[0].abs() >= self.unsafe_theta || norm(x) >= self.sets.unsafe_norm
    }
}

/// Two-state plant with a control nonlinearity, standing in for a
/// non-control-affine benchmark: `ẋ1 = x2`, `ẋ2 = −sin x1 + u + k·u|u|`.
#[derive(Debug, Clone)]
pub struct NonaffinePendulum {
    pub gain: f64,
    pub safe_theta: f64,
    pub unsafe_theta: f64,
    sets: NormBoxSets,
}

impl NonaffinePendulum {
    pub fn from_constants(c: &Constants) -> Result<Self> {
        Ok(NonaffinePendulum {
            gain: c.scalar("nonaffine_gain")?,
            safe_theta: c.scalar("safe_theta")?,
            unsafe_theta: c.scalar("unsafe_theta")?,
            sets: NormBoxSets::from_constants(c)?,
        })
    }
}

impl SystemModel for NonaffinePendulum {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn eval(&self, _t: f64, x: &[f64], u: &[f64], xdot: &mut [f64]) {
        xdot[0] = x[1];
        xdot[1] = -x[0].sin() + u[0] + self.gain * u[0] * u[0].abs();
    }
    fn is_control_affine(&self) -> bool {
        false
    }
    fn is_safe(&self, x: &[f64]) -> bool {
        x[0].abs() <= self.safe_theta && norm(x) <= self.sets.safe_norm
    }
    fn is_unsafe(&self, x: &[f64]) -> bool {
        x[0].abs() >= self.unsafe_theta || norm(x) >= self.sets.unsafe_norm
    }
}

/// Reference path shared by the car models: constant speed and acceleration,
/// sinusoidal yaw rate `ω_ref(t) = A sin(ν t)`.
#[derive(Debug, Clone)]
struct ReferencePath {
    v_ref: f64,
    a_ref: f64,
    omega_amplitude: f64,
    omega_frequency: f64,
}

impl ReferencePath {
    fn from_constants(c: &Constants) -> Result<Self> {
        Ok(ReferencePath {
            v_ref: c.scalar("v_ref")?,
            a_ref: c.scalar("a_ref")?,
            omega_amplitude: c.scalar("omega_ref_amplitude")?,
            omega_frequency: c.scalar("omega_ref_frequency")?,
        })
    }

    fn omega(&self, t: f64) -> f64 {
        self.omega_amplitude * (self.omega_frequency * t).sin()
    }
}

/// Kinematic single-track car in path coordinates,
/// `x = [x_e, y_e, δ, v_e, ψ_e]`, `u = [v_δ, a_long]`.
#[derive(Debug, Clone)]
pub struct CarKinematic {
    pub lf: f64,
    pub lr: f64,
    reference: ReferencePath,
}

impl CarKinematic {
    pub fn from_constants(c: &Constants) -> Result<Self> {
        Ok(CarKinematic {
            lf: c.scalar("lf")?,
            lr: c.scalar("lr")?,
            reference: ReferencePath::from_constants(c)?,
        })
    }

    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let r = &self.reference;
        let omega = r.omega(t);
        let v = x[3] + r.v_ref;
        out[0] = v * x[4].cos() - r.v_ref + omega * x[1];
        out[1] = v * x[4].sin() - omega * x[0];
        out[2] = 0.0;
        out[3] = -r.a_ref;
        out[4] = v / (self.lr + self.lf) * x[2].tan() - omega;
    }
}

impl SystemModel for CarKinematic {
    fn state_dim(&self) -> usize {
        5
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn eval(&self, t: f64, x: &[f64], u: &[f64], xdot: &mut [f64]) {
        self.drift(t, x, xdot);
        xdot[2] += u[0];
        xdot[3] += u[1];
    }
    fn affine_parts(&self, t: f64, x: &[f64], drift: &mut [f64], input: &mut [f64]) -> Result<()> {
        self.drift(t, x, drift);
        input.fill(0.0);
        input[2 * 2] = 1.0;
        input[3 * 2 + 1] = 1.0;
        Ok(())
    }
    fn is_safe(&self, _x: &[f64]) -> bool {
        true
    }
    fn is_unsafe(&self, _x: &[f64]) -> bool {
        false
    }
}

/// Dynamic single-track (sideslip) car,
/// `x = [x_e, y_e, δ, v_e, ψ_e, ψ̇_e, β]`, `u = [v_δ, a_long]`.
#[derive(Debug, Clone)]
pub struct CarSideslip {
    pub lf: f64,
    pub lr: f64,
    pub mass: f64,
    pub iz: f64,
    pub c_sf: f64,
    pub c_sr: f64,
    pub mu: f64,
    pub gravity: f64,
    reference: ReferencePath,
}

impl CarSideslip {
    pub fn from_constants(c: &Constants) -> Result<Self> {
        Ok(CarSideslip {
            lf: c.scalar("lf")?,
            lr: c.scalar("lr")?,
            mass: c.scalar("mass")?,
            iz: c.scalar("iz")?,
            c_sf: c.scalar("c_sf")?,
            c_sr: c.scalar("c_sr")?,
            mu: c.scalar("mu")?,
            gravity: c.scalar("gravity")?,
            reference: ReferencePath::from_constants(c)?,
        })
    }

    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let r = &self.reference;
        let omega = r.omega(t);
        let v = x[3] + r.v_ref;
        let (delta, psi_e, psi_e_dot, beta) = (x[2], x[4], x[5], x[6]);
        let (lf, lr, g) = (self.lf, self.lr, self.gravity);
        let wheelbase = lf + lr;
        let yaw_rate = psi_e_dot + omega;

        out[0] = v * psi_e.cos() - r.v_ref + omega * x[1];
        out[1] = v * psi_e.sin() - omega * x[0];
        out[2] = 0.0;
        out[3] = 0.0;
        out[4] = psi_e_dot;

        let k = self.mu * self.mass / (self.iz * wheelbase);
        out[5] = -k / v * (lf * lf * self.c_sf * g * lr + lr * lr * self.c_sr * g * lf) * yaw_rate
            + k * (lr * self.c_sr * g * lf - lf * self.c_sf * g * lr) * beta
            + k * (lf * self.c_sf * g * lr) * delta;

        out[6] = (self.mu / (v * v * wheelbase) * (self.c_sr * g * lf * lr - self.c_sf * g * lr * lf) - 1.0)
            * yaw_rate
            - self.mu / (v * wheelbase) * (self.c_sr * g * lf + self.c_sf * g * lr) * beta
            + self.mu / (v * wheelbase) * (self.c_sf * g * lr) * delta;
    }
}

impl SystemModel for CarSideslip {
    fn state_dim(&self) -> usize {
        7
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn eval(&self, t: f64, x: &[f64], u: &[f64], xdot: &mut [f64]) {
        self.drift(t, x, xdot);
        xdot[2] += u[0];
        xdot[3] += u[1];
    }
    fn affine_parts(&self, t: f64, x: &[f64], drift: &mut [f64], input: &mut [f64]) -> Result<()> {
        self.drift(t, x, drift);
        input.fill(0.0);
        input[2 * 2] = 1.0;
        input[3 * 2 + 1] = 1.0;
        Ok(())
    }
    fn is_safe(&self, _x: &[f64]) -> bool {
        true
    }
    fn is_unsafe(&self, _x: &[f64]) -> bool {
        false
    }
}

/// Segway with a circular obstacle at the height of its top,
/// `x = [p, θ, v, ω]`, horizontal force input.
#[derive(Debug, Clone)]
pub struct Segway {
    pub base_mass: f64,
    pub body_mass: f64,
    pub body_inertia: f64,
    pub com_length: f64,
    pub gravity: f64,
    /// Model shorthand constants λ1..λ9.
    pub lambdas: [f64; 9],
    pub obstacle: [f64; 2],
    pub unsafe_radius: f64,
    pub safe_radius: f64,
}

impl Segway {
    pub fn from_constants(c: &Constants) -> Result<Self> {
        let lambdas = c.list("lambdas")?;
        let lambdas: [f64; 9] = lambdas
            .try_into()
            .map_err(|_| Error::config("lambdas", "expected 9 entries"))?;
        let obstacle = c.list("obstacle_center")?;
        let obstacle: [f64; 2] = obstacle
            .try_into()
            .map_err(|_| Error::config("obstacle_center", "expected 2 entries"))?;
        Ok(Segway {
            base_mass: c.scalar("base_mass")?,
            body_mass: c.scalar("body_mass")?,
            body_inertia: c.scalar("body_inertia")?,
            com_length: c.scalar("com_length")?,
            gravity: c.scalar("gravity")?,
            lambdas,
            obstacle,
            unsafe_radius: c.scalar("unsafe_radius")?,
            safe_radius: c.scalar("safe_radius")?,
        })
    }

    fn total_mass(&self) -> f64 {
        self.base_mass + self.body_mass
    }

    fn total_inertia(&self) -> f64 {
        self.body_inertia + self.body_mass * self.com_length * self.com_length
    }

    fn denominator(&self, cos_theta: f64) -> f64 {
        let (m, l) = (self.body_mass, self.com_length);
        cos_theta * cos_theta - self.total_mass() * self.total_inertia() / (m * m * l * l) + self.lambdas[8]
    }

    fn split(&self, x: &[f64], drift: &mut [f64], input: &mut [f64]) {
        let [l1, l2, l3, l4, l5, l6, l7, l8, _] = self.lambdas;
        let (theta, v, omega) = (x[1], x[2], x[3]);
        let (s, c) = theta.sin_cos();
        let (m, l, g) = (self.body_mass, self.com_length, self.gravity);
        let den = self.denominator(c);
        drift[0] = v;
        drift[1] = omega;
        drift[2] = (g * s * c + l1 * v * c + l2 * v - l * omega * omega * s) / den;
        drift[3] = (l3 * v * c + l4 * v - self.total_mass() * g / (m * l) * s - omega * omega * s * c) / den;
        input[0] = 0.0;
        input[1] = 0.0;
        input[2] = l6 / self.total_mass() * (l5 + c) / den;
        input[3] = l8 * l / self.total_inertia() * (c + l7) / den;
    }

    /// Distance from the segway's top `(p + sin θ, cos θ)` to the obstacle centre.
    pub fn top_clearance(&self, x: &[f64]) -> f64 {
        let px = x[0] + x[1].sin();
        let py = x[1].cos();
        ((px - self.obstacle[0]).powi(2) + (py - self.obstacle[1]).powi(2)).sqrt()
    }
}

impl SystemModel for Segway {
    fn state_dim(&self) -> usize {
        4
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn eval(&self, _t: f64, x: &[f64], u: &[f64], xdot: &mut [f64]) {
        let mut input = [0.0; 4];
        self.split(x, xdot, &mut input);
        for i in 0..4 {
            xdot[i] += input[i] * u[0];
        }
    }
    fn affine_parts(&self, _t: f64, x: &[f64], drift: &mut [f64], input: &mut [f64]) -> Result<()> {
        self.split(x, drift, input);
        Ok(())
    }
    fn is_safe(&self, x: &[f64]) -> bool {
        self.top_clearance(x) >= self.safe_radius
    }
    fn is_unsafe(&self, x: &[f64]) -> bool {
        self.top_clearance(x) <= self.unsafe_radius
    }
}

/// Point-mass lander with optional ground-effect lift,
/// `x = [p_x, p_y, p_z, v_x, v_y, v_z]`, `u = [f_x, f_y, f_z]`.
#[derive(Debug, Clone)]
pub struct NeuralLander {
    pub mass: f64,
    pub gravity: f64,
    /// Ground-effect model `F_a3 = −k_ge / (p_z + h0)`; zero disables it.
    pub ground_effect_gain: f64,
    pub ground_effect_offset: f64,
    pub safe_min_height: f64,
    pub unsafe_max_height: f64,
    sets: NormBoxSets,
}

impl NeuralLander {
    pub fn from_constants(c: &Constants) -> Result<Self> {
        Ok(NeuralLander {
            mass: c.scalar("mass")?,
            gravity: c.scalar("gravity")?,
            ground_effect_gain: c.scalar_or("ground_effect_gain", 0.0)?,
            ground_effect_offset: c.scalar_or("ground_effect_offset", 1.0)?,
            safe_min_height: c.scalar("safe_min_height")?,
            unsafe_max_height: c.scalar("unsafe_max_height")?,
            sets: NormBoxSets::from_constants(c)?,
        })
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let fa3 = if self.ground_effect_gain == 0.0 {
            0.0
        } else {
            -self.ground_effect_gain / (x[2] + self.ground_effect_offset)
        };
        out[0] = x[3];
        out[1] = x[4];
        out[2] = x[5];
        out[3] = 0.0;
        out[4] = 0.0;
        out[5] = fa3 / self.mass - self.gravity;
    }
}

impl SystemModel for NeuralLander {
    fn state_dim(&self) -> usize {
        6
    }
    fn control_dim(&self) -> usize {
        3
    }
    fn eval(&self, _t: f64, x: &[f64], u: &[f64], xdot: &mut [f64]) {
        self.drift(x, xdot);
        for i in 0..3 {
            xdot[3 + i] += u[i] / self.mass;
        }
    }
    fn affine_parts(&self, _t: f64, x: &[f64], drift: &mut [f64], input: &mut [f64]) -> Result<()> {
        self.drift(x, drift);
        input.fill(0.0);
        for i in 0..3 {
            input[(3 + i) * 3 + i] = 1.0 / self.mass;
        }
        Ok(())
    }
    fn is_safe(&self, x: &[f64]) -> bool {
        x[2] >= self.safe_min_height && norm(x) <= self.sets.safe_norm
    }
    fn is_unsafe(&self, x: &[f64]) -> bool {
        x[2] <= self.unsafe_max_height || norm(x) >= self.sets.unsafe_norm
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Obstacle {
    Circle { center: [f64; 2], radius: f64 },
    Box { lo: [f64; 2], hi: [f64; 2] },
}

impl Obstacle {
    /// Signed-free distance from `p` to the obstacle (zero inside).
    fn distance(&self, p: [f64; 2]) -> f64 {
        match *self {
            Obstacle::Circle { center, radius } => {
                let d = ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2)).sqrt();
                (d - radius).max(0.0)
            }
            Obstacle::Box { lo, hi } => {
                let dx = (lo[0] - p[0]).max(0.0).max(p[0] - hi[0]);
                let dz = (lo[1] - p[1]).max(0.0).max(p[1] - hi[1]);
                (dx * dx + dz * dz).sqrt()
            }
        }
    }

    fn contains(&self, p: [f64; 2]) -> bool {
        match *self {
            Obstacle::Circle { center, radius } => {
                (p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2) <= radius * radius
            }
            Obstacle::Box { lo, hi } => p[0] >= lo[0] && p[0] <= hi[0] && p[1] >= lo[1] && p[1] <= hi[1],
        }
    }
}

/// Planar quadrotor among obstacles,
/// `x = [p_x, p_z, θ, v_x, v_z, θ̇]`, `u = [u_1, u_2]` rotor thrusts.
#[derive(Debug, Clone)]
pub struct Quad2d {
    pub mass: f64,
    pub inertia: f64,
    pub arm: f64,
    pub gravity: f64,
    pub obstacles: Vec<Obstacle>,
    /// Clearance from every obstacle boundary required to count as safe.
    pub safe_offset: f64,
}

impl Quad2d {
    pub fn from_constants(c: &Constants) -> Result<Self> {
        let circles = c.list_or_empty("obstacle_circles")?;
        if circles.len() % 3 != 0 {
            return Err(Error::config("obstacle_circles", "expected triples [cx, cz, r, ...]"));
        }
        let boxes = c.list_or_empty("obstacle_boxes")?;
        if boxes.len() % 4 != 0 {
            return Err(Error::config(
                "obstacle_boxes",
                "expected quadruples [x_lo, z_lo, x_hi, z_hi, ...]",
            ));
        }
        let mut obstacles: Vec<Obstacle> = circles
            .chunks_exact(3)
            .map(|c| Obstacle::Circle {
                center: [c[0], c[1]],
                radius: c[2],
            })
            .collect();
        obstacles.extend(boxes.chunks_exact(4).map(|b| Obstacle::Box {
            lo: [b[0], b[1]],
            hi: [b[2], b[3]],
        }));
        Ok(Quad2d {
            mass: c.scalar("mass")?,
            inertia: c.scalar("inertia")?,
            arm: c.scalar("arm")?,
            gravity: c.scalar("gravity")?,
            obstacles,
            safe_offset: c.scalar("safe_offset")?,
        })
    }

    fn split(&self, x: &[f64], drift: &mut [f64], input: &mut [f64]) {
        let (s, c) = x[2].sin_cos();
        drift[0] = x[3];
        drift[1] = x[4];
        drift[2] = x[5];
        drift[3] = 0.0;
        drift[4] = -self.gravity;
        drift[5] = 0.0;
        input.fill(0.0);
        input[3 * 2] = s / self.mass;
        input[3 * 2 + 1] = s / self.mass;
        input[4 * 2] = c / self.mass;
        input[4 * 2 + 1] = c / self.mass;
        input[5 * 2] = self.arm / self.inertia;
        input[5 * 2 + 1] = -self.arm / self.inertia;
    }
}

impl SystemModel for Quad2d {
    fn state_dim(&self) -> usize {
        6
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn eval(&self, _t: f64, x: &[f64], u: &[f64], xdot: &mut [f64]) {
        let mut input = [0.0; 12];
        self.split(x, xdot, &mut input);
        for r in 3..6 {
            xdot[r] += input[r * 2] * u[0] + input[r * 2 + 1] * u[1];
        }
    }
    fn affine_parts(&self, _t: f64, x: &[f64], drift: &mut [f64], input: &mut [f64]) -> Result<()> {
        self.split(x, drift, input);
        Ok(())
    }
    fn is_safe(&self, x: &[f64]) -> bool {
        let p = [x[0], x[1]];
        self.obstacles
            .iter()
            .all(|o| !o.contains(p) && o.distance(p) >= self.safe_offset)
    }
    fn is_unsafe(&self, x: &[f64]) -> bool {
        let p = [x[0], x[1]];
        self.obstacles.iter().any(|o| o.contains(p))
    }
}

/// Nine-state quadrotor with thrust and attitude-rate inputs,
/// `x = [p, v, φ, θ, ψ]`, `u = [f, φ̇, θ̇, ψ̇]`.
#[derive(Debug, Clone)]
pub struct Quad3d {
    pub mass: f64,
    pub gravity: f64,
    pub safe_min_height: f64,
    pub unsafe_max_height: f64,
    sets: NormBoxSets,
}

impl Quad3d {
    pub fn from_constants(c: &Constants) -> Result<Self> {
        Ok(Quad3d {
            mass: c.scalar("mass")?,
            gravity: c.scalar("gravity")?,
            safe_min_height: c.scalar("safe_min_height")?,
            unsafe_max_height: c.scalar("unsafe_max_height")?,
            sets: NormBoxSets::from_constants(c)?,
        })
    }

    fn thrust_direction(&self, x: &[f64]) -> [f64; 3] {
        let (sphi, cphi) = x[6].sin_cos();
        let (sth, cth) = x[7].sin_cos();
        [-sth / self.mass, cth * sphi / self.mass, cth * cphi / self.mass]
    }
}

impl SystemModel for Quad3d {
    fn state_dim(&self) -> usize {
        9
    }
    fn control_dim(&self) -> usize {
        4
    }
    fn eval(&self, _t: f64, x: &[f64], u: &[f64], xdot: &mut [f64]) {
        let d = self.thrust_direction(x);
        xdot[0] = x[3];
        xdot[1] = x[4];
        xdot[2] = x[5];
        xdot[3] = d[0] * u[0];
        xdot[4] = d[1] * u[0];
        xdot[5] = -self.gravity + d[2] * u[0];
        xdot[6] = u[1];
        xdot[7] = u[2];
        xdot[8] = u[3];
    }
    fn affine_parts(&self, _t: f64, x: &[f64], drift: &mut [f64], input: &mut [f64]) -> Result<()> {
        let d = self.thrust_direction(x);
        drift.fill(0.0);
        drift[0] = x[3];
        drift[1] = x[4];
        drift[2] = x[5];
        drift[5] = -self.gravity;
        input.fill(0.0);
        for i in 0..3 {
            input[(3 + i) * 4] = d[i];
        }
        input[6 * 4 + 1] = 1.0;
        input[7 * 4 + 2] = 1.0;
        input[8 * 4 + 3] = 1.0;
        Ok(())
    }
    fn is_safe(&self, x: &[f64]) -> bool {
        x[2] >= self.safe_min_height && norm(x) <= self.sets.safe_norm
    }
    fn is_unsafe(&self, x: &[f64]) -> bool {
        x[2] <= self.unsafe_max_height || norm(x) >= self.sets.unsafe_norm
    }
}
