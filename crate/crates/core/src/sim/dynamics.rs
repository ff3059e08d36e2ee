//! Control law, environment forces and the fixed-step integrator.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::log::{EndpointSample, SimLog, StepRecord};
use super::{SawCouplingConfig, SawingSetup, SimError, SkillAxes, StiffnessSource};
use crate::planner::{Axis, SawFsm, StrokeDirection};

/// `F = K(x_des − x) + D(v_des − v) + F_ff`
pub fn impedance_force(
    k: &Matrix3<f64>,
    d: &Matrix3<f64>,
    x_des: &Vector3<f64>,
    x: &Vector3<f64>,
    v_des: &Vector3<f64>,
    v: &Vector3<f64>,
    f_ff: &Vector3<f64>,
) -> Vector3<f64> {
    k * (x_des - x) + d * (v_des - v) + f_ff
}

fn is_diagonal(m: &Matrix3<f64>) -> bool {
    (0..3).all(|i| (0..3).all(|j| i == j || m[(i, j)] == 0.0))
}

fn eigen_map(k: &Matrix3<f64>, f: impl Fn(f64) -> f64) -> Matrix3<f64> {
    if is_diagonal(k) {
        return Matrix3::from_diagonal(&k.diagonal().map(f));
    }
    let eig = SymmetricEigen::new((k + k.transpose()) * 0.5);
    let v = eig.eigenvectors;
    v * Matrix3::from_diagonal(&eig.eigenvalues.map(f)) * v.transpose()
}

/// Clamps the eigenvalues of `k` into `[k_min, k_max]`.
pub fn clamp_stiffness(k: &Matrix3<f64>, limits: [f64; 2]) -> Matrix3<f64> {
    eigen_map(k, |l| l.clamp(limits[0], limits[1]))
}

/// Critical-style damping along each principal axis of `k`; axes softer than
/// `k_floor` are damped as if they had stiffness `k_floor`.
pub fn damping_matrix(k: &Matrix3<f64>, mass: f64, zeta: f64, k_floor: f64) -> Matrix3<f64> {
    eigen_map(k, |l| 2.0 * zeta * (mass * l.max(k_floor)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndpointState {
    pub x: Vector3<f64>,
    pub v: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub endpoints: [EndpointState; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnvironmentForces {
    pub couple: [Vector3<f64>; 2],
    pub friction: [Vector3<f64>; 2],
    pub contact: [Vector3<f64>; 2],
    /// total wood normal force, N
    pub normal: f64,
    /// fraction of the way from A to B at which the wood supports the saw
    pub lever: f64,
}

impl EnvironmentForces {
    pub fn total(&self, i: usize) -> Vector3<f64> {
        self.couple[i] + self.friction[i] + self.contact[i]
    }
}

pub fn environment_forces(state: &SimState, cfg: &SawCouplingConfig) -> EnvironmentForces {
    let [a, b] = &state.endpoints;
    let mut out = EnvironmentForces::default();

    let d = b.x - a.x;
    let dist = d.norm();
    if dist > 0.0 {
        let f = d * (cfg.k_couple * (dist - cfg.rest_length) / dist);
        out.couple = [f, -f];
    }

    let span = b.x.y - a.x.y;
    let lever = if span.abs() > 1e-12 { ((cfg.wood_y - a.x.y) / span).clamp(0.0, 1.0) } else { 0.5 };
    let z_contact = a.x.z + lever * (b.x.z - a.x.z);
    let penetration = cfg.wood_top_z - z_contact;
    out.lever = lever;
    if penetration > 0.0 {
        let n = cfg.k_wood * penetration;
        out.normal = n;
        out.contact = [Vector3::new(0.0, 0.0, (1.0 - lever) * n), Vector3::new(0.0, 0.0, lever * n)];
        let v_saw = 0.5 * (a.v.y + b.v.y);
        let f = -cfg.mu * n * (v_saw / cfg.v_eps).tanh();
        let half = Vector3::new(0.0, 0.5 * f, 0.0);
        out.friction = [half, half];
    }
    out
}

/// Semi-implicit Euler: velocity first, then position with the new velocity.
pub fn step_dynamics(state: &EndpointState, force: &Vector3<f64>, mass: f64, dt: f64) -> EndpointState {
    let v = state.v + force * (dt / mass);
    EndpointState { x: state.x + v * dt, v }
}

/// Heights at which both endpoints hold still under their `z` stiffness,
/// vertical feedforward and the wood contact, with the saw at its current
/// lever position. `None` when no such rest exists, e.g. with no `z`
/// stiffness the saw can tip freely about the contact.
pub fn rest_heights(
    k_z: [f64; 2],
    z_des: [f64; 2],
    f_z: [f64; 2],
    state: &SimState,
    cfg: &SawCouplingConfig,
) -> Option<[f64; 2]> {
    let lever = environment_forces(state, cfg).lever;
    let w = [1.0 - lever, lever];
    let kw = cfg.k_wood;
    let m = nalgebra::Matrix2::new(
        k_z[0] + w[0] * w[0] * kw,
        w[0] * w[1] * kw,
        w[1] * w[0] * kw,
        k_z[1] + w[1] * w[1] * kw,
    );
    let rhs = nalgebra::Vector2::new(
        k_z[0] * z_des[0] + f_z[0] + w[0] * kw * cfg.wood_top_z,
        k_z[1] * z_des[1] + f_z[1] + w[1] * kw * cfg.wood_top_z,
    );
    let scale = m.abs().max();
    if m.determinant().abs() > 1e-9 * scale * scale {
        let z = m.lu().solve(&rhs)?;
        if w[0] * z[0] + w[1] * z[1] < cfg.wood_top_z {
            return Some([z[0], z[1]]);
        }
    }
    if k_z.iter().all(|k| *k > 0.0) {
        let z = [z_des[0] + f_z[0] / k_z[0], z_des[1] + f_z[1] / k_z[1]];
        if w[0] * z[0] + w[1] * z[1] >= cfg.wood_top_z {
            return Some(z);
        }
    }
    None
}

/// Stepwise runner; [`run_sawing`] drives it over the configured duration.
pub struct Simulator<'a> {
    setup: &'a SawingSetup,
    fsm: [SawFsm; 2],
    state: SimState,
    log: SimLog,
}

impl<'a> Simulator<'a> {
    pub fn new(setup: &'a SawingSetup) -> Result<Self, SimError> {
        if setup.planner.axis != Axis::Y {
            return Err(SimError::InvalidConfig("the simulated saw moves along y".into()));
        }
        let centers = {
            let half = Vector3::new(0.0, setup.coupling.rest_length / 2.0, 0.0);
            let base = Vector3::new(0.0, setup.coupling.wood_y, setup.planner.z_height_m);
            [base - half, base + half]
        };
        let goal_shift = setup.planner.axis.unit() * setup.planner.goal_offset_m;
        let wa = setup.planner.waypoints(centers[0] + goal_shift);
        let wb = setup.planner.waypoints(centers[1]);
        let fsm_a = SawFsm::new(wa, setup.planner.period_s, StrokeDirection::Forward)?;
        let fsm_b = SawFsm::new(wb, setup.planner.period_s, StrokeDirection::Forward)?.with_time_shift(setup.phase_offset);
        let state = SimState {
            t: 0.0,
            endpoints: [
                EndpointState { x: wa[0], v: Vector3::zeros() },
                EndpointState { x: wb[0], v: Vector3::zeros() },
            ],
        };
        let mut sim = Self {
            setup,
            fsm: [fsm_a, fsm_b],
            state,
            log: SimLog::new(setup.dt, setup.planner.period_s, setup.phase_offset),
        };
        let kz = [
            sim.stiffness_at(0, &wa[0])?[(2, 2)],
            sim.stiffness_at(1, &wb[0])?[(2, 2)],
        ];
        let ff = [setup.endpoints[0].feedforward.z, setup.endpoints[1].feedforward.z];
        if let Some(z) = rest_heights(kz, [wa[0].z, wb[0].z], ff, &sim.state, &setup.coupling) {
            sim.state.endpoints[0].x.z = z[0];
            sim.state.endpoints[1].x.z = z[1];
        }
        Ok(sim)
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn set_state(&mut self, state: SimState) {
        self.state = state;
    }

    pub fn log(&self) -> &SimLog {
        &self.log
    }

    pub fn into_log(self) -> SimLog {
        self.log
    }

    /// Clamped stiffness endpoint `i` applies at position `x`.
    pub fn stiffness_at(&self, i: usize, x: &Vector3<f64>) -> Result<Matrix3<f64>, SimError> {
        let ep = &self.setup.endpoints[i];
        let raw = match &ep.stiffness {
            StiffnessSource::Constant(k) => *k,
            StiffnessSource::Skill { model, frame, axes, kx, kz } => {
                let p = frame.to_skill(x);
                let k = frame.stiffness_to_world(&model.reproduce([p.y, p.z])?.stiffness);
                match axes {
                    SkillAxes::Full => *k.matrix(),
                    SkillAxes::YOnly => Matrix3::from_diagonal(&Vector3::new(*kx, k.matrix()[(1, 1)], *kz)),
                }
            }
        };
        Ok(clamp_stiffness(&raw, ep.limits))
    }

    /// Advances one step toward explicitly given desired states.
    pub fn step_with_desired(&mut self, desired: [(Vector3<f64>, Vector3<f64>); 2]) -> Result<(), SimError> {
        let setup = self.setup;
        let env = environment_forces(&self.state, &setup.coupling);
        let mut samples = [EndpointSample::default(); 2];
        let mut next = self.state.endpoints;
        for i in 0..2 {
            let ep = &setup.endpoints[i];
            let st = &self.state.endpoints[i];
            let (x_des, v_des) = desired[i];
            let k = self.stiffness_at(i, &st.x)?;
            let d = damping_matrix(&k, ep.mass, ep.damping_ratio, setup.k_floor);
            let f_ctrl = impedance_force(&k, &d, &x_des, &st.x, &v_des, &st.v, &ep.feedforward);
            samples[i] = EndpointSample {
                x: st.x,
                x_des,
                e: x_des - st.x,
                f_ctrl,
                f_couple: env.couple[i],
                f_fric: env.friction[i],
                f_contact: env.contact[i],
                k_diag: k.diagonal(),
            };
            next[i] = step_dynamics(st, &(f_ctrl + env.total(i)), ep.mass, setup.dt);
        }
        let t = self.state.t;
        self.log.records.push(StepRecord {
            t,
            stroke: [self.fsm[0].stroke_count, self.fsm[1].stroke_count],
            direction: [self.fsm[0].state, self.fsm[1].state],
            endpoints: samples,
        });
        for (i, s) in samples.iter().enumerate() {
            if s.e.amax() > setup.error_bound {
                return Err(SimError::InstabilityDetected {
                    t,
                    endpoint: if i == 0 { 'A' } else { 'B' },
                    log: Box::new(self.log.clone()),
                });
            }
        }
        if next.iter().any(|s| s.x.iter().chain(s.v.iter()).any(|c| !c.is_finite())) {
            return Err(SimError::NonFiniteState {
                t,
                log: Box::new(self.log.clone()),
            });
        }
        self.state = SimState {
            t: t + setup.dt,
            endpoints: next,
        };
        Ok(())
    }

    /// Advances one step following the stroke machines.
    pub fn step(&mut self, step_index: usize) -> Result<(), SimError> {
        let t = step_index as f64 * self.setup.dt;
        self.state.t = t;
        let desired = [self.fsm[0].step(t), self.fsm[1].step(t)];
        self.step_with_desired(desired)
    }
}

/// Runs the full experiment. On abort the error carries the partial log.
pub fn run_sawing(setup: &SawingSetup) -> Result<SimLog, SimError> {
    let mut sim = Simulator::new(setup)?;
    let steps = (setup.duration / setup.dt).round() as usize;
    for n in 0..steps {
        sim.step(n)?;
    }
    Ok(sim.into_log())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    #[test]
    fn impedance_examples() {
        let k = Matrix3::from_diagonal(&v(0.0, 800.0, 800.0));
        let z = Vector3::zeros();
        let f = impedance_force(&k, &Matrix3::zeros(), &v(0.0, 0.0125, 0.0), &z, &z, &z, &z);
        assert_eq!(f, v(0.0, 10.0, 0.0));
        let ff = v(1.0, 2.0, -10.0);
        let p = v(0.3, 0.2, 0.1);
        assert_eq!(impedance_force(&k, &Matrix3::identity(), &p, &p, &p, &p, &ff), ff);
        let e = v(0.01, -0.02, 0.03);
        let f1 = impedance_force(&k, &Matrix3::zeros(), &e, &z, &z, &z, &ff) - ff;
        let f2 = impedance_force(&(k * 2.0), &Matrix3::zeros(), &e, &z, &z, &z, &ff) - ff;
        assert_eq!(f2, f1 * 2.0);
    }

    #[test]
    fn clamp_and_damping() {
        let k = Matrix3::new(900.0, 100.0, 0.0, 100.0, 900.0, 0.0, 0.0, 0.0, -5.0);
        let c = clamp_stiffness(&k, [0.0, 800.0]);
        let eig = SymmetricEigen::new(c).eigenvalues;
        assert!(eig.iter().all(|&l| (-1e-9..=800.0 + 1e-9).contains(&l)));
        let d = damping_matrix(&Matrix3::from_diagonal(&v(0.0, 800.0, 20.0)), 5.0, 1.0, 10.0);
        assert_eq!(d.diagonal(), v(2.0 * 50f64.sqrt(), 2.0 * 4000f64.sqrt(), 2.0 * 100f64.sqrt()));
    }

    fn state(a: Vector3<f64>, b: Vector3<f64>) -> SimState {
        SimState {
            t: 0.0,
            endpoints: [EndpointState { x: a, v: Vector3::zeros() }, EndpointState { x: b, v: Vector3::zeros() }],
        }
    }

    #[test]
    fn environment_examples() {
        let cfg = SawCouplingConfig::default();
        let rest = environment_forces(&state(v(0.0, -0.5, 0.1), v(0.0, 0.5, 0.1)), &cfg);
        assert_eq!(rest.couple, [Vector3::zeros(); 2]);
        assert_eq!(rest.normal, 0.0);
        assert_eq!(rest.friction, [Vector3::zeros(); 2]);
        let pressed = environment_forces(&state(v(0.0, -0.5, -0.001), v(0.0, 0.5, -0.001)), &cfg);
        assert!((pressed.normal - 100.0).abs() < 1e-9);
        assert!((pressed.contact[0].z + pressed.contact[1].z - 100.0).abs() < 1e-9);
        let stretched = environment_forces(&state(v(0.0, -0.6, 0.0), v(0.0, 0.6, 0.0)), &cfg);
        assert!((stretched.couple[0] + stretched.couple[1]).amax() < 1e-10);
        assert!((stretched.couple[0].y - 2e4).abs() < 1e-6);
    }

    #[test]
    fn lever_rule_loads_nearer_endpoint() {
        let cfg = SawCouplingConfig::default();
        let f = environment_forces(&state(v(0.0, -0.2, -0.001), v(0.0, 0.8, -0.001)), &cfg);
        assert!((f.lever - 0.2).abs() < 1e-12);
        assert!((f.contact[0].z - 80.0).abs() < 1e-9 && (f.contact[1].z - 20.0).abs() < 1e-9);
    }

    #[test]
    fn rest_heights_balance_forces() {
        let cfg = SawCouplingConfig::default();
        let mut st = state(v(0.0, -0.65, 0.0), v(0.0, 0.35, 0.0));
        let z = rest_heights([800.0, 400.0], [0.0, 0.0], [-10.0, -10.0], &st, &cfg).unwrap();
        st.endpoints[0].x.z = z[0];
        st.endpoints[1].x.z = z[1];
        let env = environment_forces(&st, &cfg);
        for (i, k) in [800.0, 400.0].into_iter().enumerate() {
            let f = -k * z[i] - 10.0 + env.contact[i].z;
            assert!(f.abs() < 1e-9, "endpoint {i}: residual {f}");
        }
        assert!(z[0] < z[1], "the endpoint farther from the contact dips");
        assert!(rest_heights([0.0, 0.0], [0.0, 0.0], [-10.0, -10.0], &st, &cfg).is_none());
        let lifted = rest_heights([800.0, 800.0], [0.0, 0.0], [5.0, 5.0], &st, &cfg).unwrap();
        assert_eq!(lifted, [5.0 / 800.0; 2]);
    }

    #[test]
    fn integrator_examples() {
        let s = EndpointState { x: v(1.0, 2.0, 3.0), v: v(0.5, -1.0, 0.0) };
        let n = step_dynamics(&s, &Vector3::zeros(), 2.0, 0.01);
        assert_eq!(n.x, s.x + s.v * 0.01);
        let mut s = EndpointState { x: Vector3::zeros(), v: Vector3::zeros() };
        let f = v(0.0, 3.0, 0.0);
        for _ in 0..1000 {
            s = step_dynamics(&s, &f, 1.5, 1e-3);
        }
        assert!((s.v.y - 1000.0 * (3.0 / 1.5) * 1e-3).abs() < 1e-12);
    }

    #[test]
    fn harmonic_oscillator_energy_drift() {
        let (m, k, dt) = (1.0, 1.0, 1e-3);
        let mut s = EndpointState { x: Vector3::x(), v: Vector3::zeros() };
        let energy = |s: &EndpointState| 0.5 * m * s.v.norm_squared() + 0.5 * k * s.x.norm_squared();
        let e0 = energy(&s);
        let mut worst = 0.0f64;
        for n in 1..=10_000 {
            s = step_dynamics(&s, &(-s.x * k), m, dt);
            worst = worst.max((energy(&s) - e0).abs() / e0);
            if n == 10_000 {
                // compare with the analytic solution cos(t)
                assert!((s.x.x - (n as f64 * dt).cos()).abs() < 1e-3);
            }
        }
        assert!(worst < 0.01);
    }
}
