//! Sliding-window optimization, marginalization and feature bookkeeping.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector, SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::residuals::{
    imu_residual, plane_residual, robust_loss, sqrt_information, visual_residual, wheel_residual,
    Jac, KeyframeState, LossKind, Vector15, WheelFactor,
};
use crate::anomaly::AnomalyVerdict;
use crate::math::Extrinsics;
use crate::preint::{PreintegratedImu, PreintegratedWheelOdom};
use crate::simworld::FeatureObservation;
use crate::{Error, Result, GRAVITY};

const DOF: usize = 15;

/// Standard deviations of the prior placed on the first keyframe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialPrior {
    pub position: f64,
    pub tilt: f64,
    pub yaw: f64,
    pub velocity: f64,
    pub accel_bias: f64,
    pub gyro_bias: f64,
}

impl Default for InitialPrior {
    fn default() -> Self {
        Self {
            position: 1e-3,
            tilt: 1e-2,
            yaw: 1e-3,
            velocity: 0.05,
            accel_bias: 0.05,
            gyro_bias: 5e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub window_size: usize,
    pub max_iterations: usize,
    /// Stop when the accepted relative cost decrease falls below this.
    pub relative_tolerance: f64,
    pub plane_constraint: bool,
    /// Standard deviation of the plane residual (m).
    pub plane_sigma: f64,
    /// Feature noise on the normalized image plane.
    pub feature_sigma: f64,
    pub visual_loss: LossKind,
    pub wheel_loss: LossKind,
    pub initial_damping: f64,
    /// Smallest ray angle accepted for triangulation (rad).
    pub min_triangulation_angle: f64,
    pub min_depth: f64,
    pub max_depth: f64,
    pub initial_prior: InitialPrior,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            window_size: 10,
            max_iterations: 10,
            relative_tolerance: 1e-6,
            plane_constraint: true,
            plane_sigma: 0.01,
            feature_sigma: 1.5e-3,
            visual_loss: LossKind::Huber,
            wheel_loss: LossKind::Huber,
            initial_damping: 1e-4,
            min_triangulation_angle: 0.3f64.to_radians(),
            min_depth: 0.2,
            max_depth: 40.0,
            initial_prior: InitialPrior::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub id: u64,
    pub t: f64,
    pub state: KeyframeState,
}

/// Link between consecutive keyframes.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub imu: PreintegratedImu,
    pub wheel: Option<WheelFactor>,
    pub verdict: Option<AnomalyVerdict>,
}

impl Link {
    /// The wheel factor if it takes part in the optimization.
    pub fn active_wheel(&self) -> Option<&WheelFactor> {
        self.wheel.as_ref().filter(|w| !w.gated)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub id: u32,
    pub anchor: u64,
    pub anchor_uv: Vector2<f64>,
    /// `None` until triangulated.
    pub inv_depth: Option<f64>,
    /// Observations in later keyframes.
    pub observations: Vec<(u64, Vector2<f64>)>,
}

/// Gaussian prior left by marginalization, as a quadratic in the local
/// difference from `linearization`: `δxᵀ H δx + 2 bᵀ δx`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalizationPrior {
    pub keyframe_ids: Vec<u64>,
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub linearization: Vec<KeyframeState>,
}

/// Inputs attached when a new keyframe enters the window.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeInput {
    pub t: f64,
    pub observations: Vec<FeatureObservation>,
    pub imu: PreintegratedImu,
    pub wheel: Option<PreintegratedWheelOdom>,
    pub verdict: Option<AnomalyVerdict>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizeReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after every accepted step.
    pub accepted_costs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SlidingWindow {
    pub config: EstimatorConfig,
    pub extrinsics: Extrinsics,
    pub keyframes: VecDeque<Keyframe>,
    /// `links[k]` joins `keyframes[k]` and `keyframes[k + 1]`.
    pub links: VecDeque<Link>,
    pub features: BTreeMap<u32, Feature>,
    pub prior: Option<MarginalizationPrior>,
    next_id: u64,
}

/// Which factors enter a linearization.
#[derive(Clone, Copy)]
enum Scope {
    All,
    /// Only factors touching the oldest keyframe (for marginalization).
    Oldest,
}

struct Layout {
    features: Vec<u32>,
    keyframe_index: BTreeMap<u64, usize>,
    n_poses: usize,
}

impl Layout {
    fn dim(&self) -> usize {
        self.n_poses * DOF + self.features.len()
    }
    fn feature_col(&self, k: usize) -> usize {
        self.n_poses * DOF + k
    }
}

struct Linearization {
    cost: f64,
    h: DMatrix<f64>,
    g: DVector<f64>,
}

fn accumulate<const R: usize>(
    h: &mut DMatrix<f64>,
    g: &mut DVector<f64>,
    blocks: &[(usize, Jac<R>)],
    r: &SVector<f64, R>,
    w: f64,
) {
    for (a, ja) in blocks {
        let mut ga = g.fixed_rows_mut::<DOF>(*a);
        ga += ja.transpose() * r * w;
        for (b, jb) in blocks {
            let mut hab = h.fixed_view_mut::<DOF, DOF>(*a, *b);
            hab += ja.transpose() * jb * w;
        }
    }
}

impl SlidingWindow {
    /// Start a window from a known first state.
    pub fn new(
        config: EstimatorConfig,
        extrinsics: Extrinsics,
        t: f64,
        state: KeyframeState,
        observations: &[FeatureObservation],
    ) -> Self {
        let mut w = Self {
            config,
            extrinsics,
            keyframes: VecDeque::new(),
            links: VecDeque::new(),
            features: BTreeMap::new(),
            prior: None,
            next_id: 0,
        };
        let id = w.push_keyframe(t, state, observations);
        let s = config.initial_prior;
        let sig = [
            s.position,
            s.position,
            s.position,
            s.tilt,
            s.tilt,
            s.yaw,
            s.velocity,
            s.velocity,
            s.velocity,
            s.accel_bias,
            s.accel_bias,
            s.accel_bias,
            s.gyro_bias,
            s.gyro_bias,
            s.gyro_bias,
        ];
        w.prior = Some(MarginalizationPrior {
            keyframe_ids: vec![id],
            h: DMatrix::from_diagonal(&DVector::from_iterator(DOF, sig.iter().map(|x| x.powi(-2)))),
            b: DVector::zeros(DOF),
            linearization: vec![state],
        });
        w
    }

    pub fn gravity() -> Vector3<f64> {
        Vector3::new(0.0, 0.0, -GRAVITY)
    }

    pub fn latest(&self) -> &Keyframe {
        self.keyframes.back().expect("window is never empty")
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    fn push_keyframe(
        &mut self,
        t: f64,
        state: KeyframeState,
        observations: &[FeatureObservation],
    ) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.keyframes.push_back(Keyframe { id, t, state });
        for o in observations {
            self.features
                .entry(o.feature_id)
                .and_modify(|f| f.observations.push((id, o.uv)))
                .or_insert(Feature {
                    id: o.feature_id,
                    anchor: id,
                    anchor_uv: o.uv,
                    inv_depth: None,
                    observations: Vec::new(),
                });
        }
        id
    }

    /// Append a keyframe predicted from the IMU pre-integration, attach its
    /// factors, triangulate new features and marginalize beyond the window size.
    pub fn add_keyframe(&mut self, input: KeyframeInput) -> Result<()> {
        let last = self.latest().state;
        let (dp, dv, dq) = input.imu.corrected(&last.bias());
        let t = input.imu.dt_total;
        let g = Self::gravity();
        let state = KeyframeState {
            p: last.p + last.v * t + 0.5 * g * t * t + last.q * dp,
            v: last.v + g * t + last.q * dv,
            q: last.q * dq,
            ..last
        };
        let gated = input.verdict.is_some_and(|v| v.fused);
        self.links.push_back(Link {
            imu: input.imu,
            wheel: input.wheel.map(|pre| WheelFactor { pre, gated }),
            verdict: input.verdict,
        });
        self.push_keyframe(input.t, state, &input.observations);
        self.triangulate();
        if self.keyframes.len() > self.config.window_size {
            self.marginalize()?;
        }
        Ok(())
    }

    fn state_of(&self, id: u64) -> Option<&KeyframeState> {
        self.keyframes.iter().find(|k| k.id == id).map(|k| &k.state)
    }

    fn camera_ray(&self, state: &KeyframeState, uv: &Vector2<f64>) -> (Vector3<f64>, Vector3<f64>) {
        let cam = self.extrinsics.imu_camera;
        let center = state.p + state.q * cam.translation;
        let dir = state.q * (cam.rotation * Vector3::new(uv.x, uv.y, 1.0));
        (center, dir)
    }

    /// Two-ray midpoint triangulation against the widest-baseline observation.
    fn triangulate(&mut self) {
        let mut updates = Vec::new();
        for f in self.features.values().filter(|f| f.inv_depth.is_none()) {
            let Some(anchor) = self.state_of(f.anchor) else {
                continue;
            };
            let (ca, da) = self.camera_ray(anchor, &f.anchor_uv);
            let mut best: Option<(f64, f64)> = None;
            for (id, uv) in &f.observations {
                let Some(s) = self.state_of(*id) else {
                    continue;
                };
                let (cb, db) = self.camera_ray(s, uv);
                let angle = da.normalize().dot(&db.normalize()).clamp(-1.0, 1.0).acos();
                if angle < self.config.min_triangulation_angle {
                    continue;
                }
                // minimize |ca + s·da − cb − u·db|
                let m =
                    SMatrix::<f64, 2, 2>::new(da.dot(&da), -da.dot(&db), da.dot(&db), -db.dot(&db));
                let rhs = Vector2::new((cb - ca).dot(&da), (cb - ca).dot(&db));
                let Some(sol) = m.lu().solve(&rhs) else {
                    continue;
                };
                let depth = sol.x;
                if sol.y <= 0.0 || depth < self.config.min_depth || depth > self.config.max_depth {
                    continue;
                }
                if best.is_none_or(|(a, _)| angle > a) {
                    best = Some((angle, depth));
                }
            }
            if let Some((_, depth)) = best {
                updates.push((f.id, 1.0 / depth));
            }
        }
        for (id, l) in updates {
            if let Some(f) = self.features.get_mut(&id) {
                f.inv_depth = Some(l);
            }
        }
    }

    fn layout(&self) -> Layout {
        let keyframe_index: BTreeMap<u64, usize> = self
            .keyframes
            .iter()
            .enumerate()
            .map(|(k, kf)| (kf.id, k))
            .collect();
        let features: Vec<u32> = self
            .features
            .values()
            .filter(|f| {
                f.inv_depth.is_some()
                    && f.observations
                        .iter()
                        .any(|(id, _)| keyframe_index.contains_key(id))
            })
            .map(|f| f.id)
            .collect();
        Layout {
            features,
            keyframe_index,
            n_poses: self.keyframes.len(),
        }
    }

    /// Cost, normal matrix and gradient at the given states and depths.
    fn linearize(
        &self,
        layout: &Layout,
        states: &[KeyframeState],
        depths: &[f64],
        scope: Scope,
        jacobians: bool,
    ) -> Result<Linearization> {
        let dim = if jacobians { layout.dim() } else { 0 };
        let mut h = DMatrix::zeros(dim, dim);
        let mut g = DVector::zeros(dim);
        let mut cost = 0.0;
        let gravity = Self::gravity();
        let oldest = self.keyframes[0].id;
        let include = |ids: &[u64]| match scope {
            Scope::All => true,
            Scope::Oldest => ids.contains(&oldest),
        };

        if let Some(prior) = &self.prior {
            if include(&prior.keyframe_ids) {
                let n = prior.keyframe_ids.len() * DOF;
                let mut dx = DVector::zeros(n);
                let mut cols = Vec::with_capacity(prior.keyframe_ids.len());
                for (k, id) in prior.keyframe_ids.iter().enumerate() {
                    let idx = layout.keyframe_index[id];
                    dx.fixed_rows_mut::<DOF>(k * DOF)
                        .copy_from(&states[idx].boxminus(&prior.linearization[k]));
                    cols.push(idx * DOF);
                }
                let hdx = &prior.h * &dx;
                cost += dx.dot(&hdx) + 2.0 * prior.b.dot(&dx);
                if jacobians {
                    let grad = hdx + &prior.b;
                    for (a, ca) in cols.iter().enumerate() {
                        let mut ga = g.fixed_rows_mut::<DOF>(*ca);
                        ga += grad.fixed_rows::<DOF>(a * DOF);
                        for (b, cb) in cols.iter().enumerate() {
                            let mut hab = h.fixed_view_mut::<DOF, DOF>(*ca, *cb);
                            hab += prior.h.fixed_view::<DOF, DOF>(a * DOF, b * DOF);
                        }
                    }
                }
            }
        }

        for (k, link) in self.links.iter().enumerate() {
            let (id_i, id_j) = (self.keyframes[k].id, self.keyframes[k + 1].id);
            if !include(&[id_i, id_j]) {
                continue;
            }
            let (xi, xj) = (&states[k], &states[k + 1]);
            let res = imu_residual(&link.imu, xi, xj, &gravity)?;
            let s = sqrt_information(&link.imu.covariance)?;
            let r = s * res.r;
            cost += r.norm_squared();
            if jacobians {
                accumulate(
                    &mut h,
                    &mut g,
                    &[(k * DOF, s * res.j_i), ((k + 1) * DOF, s * res.j_j)],
                    &r,
                    1.0,
                );
            }
            if let Some(wf) = link.active_wheel() {
                let res = wheel_residual(wf, xi, xj, &self.extrinsics)?;
                let s = sqrt_information(&wf.pre.covariance)?;
                let r = s * res.r;
                let (rho, w) = robust_loss(r.norm_squared(), self.config.wheel_loss);
                cost += rho;
                if jacobians {
                    accumulate(
                        &mut h,
                        &mut g,
                        &[(k * DOF, s * res.j_i), ((k + 1) * DOF, s * res.j_j)],
                        &r,
                        w,
                    );
                }
            }
        }

        if self.config.plane_constraint {
            for (k, kf) in self.keyframes.iter().enumerate() {
                if !include(&[kf.id]) {
                    continue;
                }
                let (r, j) = plane_residual(&states[k]);
                let inv = 1.0 / self.config.plane_sigma;
                let r = SVector::<f64, 1>::new(r * inv);
                cost += r.norm_squared();
                if jacobians {
                    accumulate(&mut h, &mut g, &[(k * DOF, j * inv)], &r, 1.0);
                }
            }
        }

        let inv_sigma = 1.0 / self.config.feature_sigma;
        for (fk, fid) in layout.features.iter().enumerate() {
            let f = &self.features[fid];
            if !include(&[f.anchor]) {
                continue;
            }
            let ia = layout.keyframe_index[&f.anchor];
            let col_l = layout.feature_col(fk);
            for (id, uv) in &f.observations {
                let Some(&ij) = layout.keyframe_index.get(id) else {
                    continue;
                };
                let Some(res) = visual_residual(
                    &f.anchor_uv,
                    uv,
                    &states[ia],
                    &states[ij],
                    depths[fk],
                    &self.extrinsics,
                ) else {
                    continue;
                };
                let r = res.r * inv_sigma;
                let (rho, w) = robust_loss(r.norm_squared(), self.config.visual_loss);
                cost += rho;
                if !jacobians {
                    continue;
                }
                let ji = res.j_i.fixed_columns::<6>(0) * inv_sigma;
                let jj = res.j_j.fixed_columns::<6>(0) * inv_sigma;
                let jl = res.j_l * inv_sigma;
                let blocks = [(ia * DOF, ji), (ij * DOF, jj)];
                for (a, ja) in &blocks {
                    let mut ga = g.fixed_rows_mut::<6>(*a);
                    ga += ja.transpose() * r * w;
                    for (b, jb) in &blocks {
                        let mut hab = h.fixed_view_mut::<6, 6>(*a, *b);
                        hab += ja.transpose() * jb * w;
                    }
                    let cross = ja.transpose() * jl * w;
                    let mut c = h.fixed_view_mut::<6, 1>(*a, col_l);
                    c += cross;
                    let mut c = h.fixed_view_mut::<1, 6>(col_l, *a);
                    c += cross.transpose();
                }
                h[(col_l, col_l)] += jl.dot(&jl) * w;
                g[col_l] += jl.dot(&r) * w;
            }
        }
        Ok(Linearization { cost, h, g })
    }

    fn current(&self, layout: &Layout) -> (Vec<KeyframeState>, Vec<f64>) {
        let states = self.keyframes.iter().map(|k| k.state).collect();
        let depths = layout
            .features
            .iter()
            .map(|id| {
                self.features[id]
                    .inv_depth
                    .expect("layout holds triangulated features")
            })
            .collect();
        (states, depths)
    }

    fn reintegrate_links(&mut self) -> Result<()> {
        for k in 0..self.links.len() {
            let bias = self.keyframes[k].state.bias();
            if self.links[k].imu.needs_reintegration(&bias) {
                self.links[k].imu = self.links[k].imu.reintegrate(&bias)?;
            }
        }
        Ok(())
    }

    /// Damped Gauss-Newton over all states and inverse depths.
    pub fn optimize(&mut self) -> Result<OptimizeReport> {
        self.reintegrate_links()?;
        let layout = self.layout();
        let (mut states, mut depths) = self.current(&layout);
        let mut lin = self.linearize(&layout, &states, &depths, Scope::All, true)?;
        let mut report = OptimizeReport {
            initial_cost: lin.cost,
            final_cost: lin.cost,
            ..Default::default()
        };
        let mut damping = self.config.initial_damping;
        let n_pose = layout.n_poses * DOF;

        while report.iterations < self.config.max_iterations {
            report.iterations += 1;
            let Some(step) = solve_damped(&lin.h, &lin.g, n_pose, damping) else {
                damping *= 10.0;
                if damping > 1e12 {
                    return Err(Error::Optimizer("normal equations stay singular".into()));
                }
                continue;
            };
            let trial_states: Vec<_> = states
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    s.boxplus(&Vector15::from_iterator(
                        step.rows(k * DOF, DOF).iter().copied(),
                    ))
                })
                .collect();
            let trial_depths: Vec<_> = depths
                .iter()
                .enumerate()
                .map(|(k, l)| l + step[n_pose + k])
                .collect();
            let valid = trial_depths.iter().all(|&l| l > 0.0);
            let trial_cost = if valid {
                self.linearize(&layout, &trial_states, &trial_depths, Scope::All, false)
                    .map(|l| l.cost)
                    .ok()
            } else {
                None
            };
            match trial_cost {
                Some(c) if c < lin.cost => {
                    let decrease = (lin.cost - c) / lin.cost.abs().max(1e-12);
                    states = trial_states;
                    depths = trial_depths;
                    report.accepted_costs.push(c);
                    damping = (damping / 3.0).max(1e-10);
                    lin = self.linearize(&layout, &states, &depths, Scope::All, true)?;
                    if decrease < self.config.relative_tolerance {
                        break;
                    }
                }
                _ => {
                    damping *= 10.0;
                    if damping > 1e10 {
                        break;
                    }
                }
            }
        }
        report.final_cost = lin.cost;

        for (kf, s) in self.keyframes.iter_mut().zip(&states) {
            kf.state = *s;
        }
        for (id, l) in layout.features.iter().zip(&depths) {
            let f = self.features.get_mut(id).expect("feature in layout");
            let depth = 1.0 / l;
            if depth < self.config.min_depth || depth > self.config.max_depth * 5.0 {
                f.inv_depth = None;
            } else {
                f.inv_depth = Some(*l);
            }
        }
        Ok(report)
    }

    /// Fold the oldest keyframe and the features anchored there into the prior.
    pub fn marginalize(&mut self) -> Result<()> {
        if self.keyframes.len() < 2 {
            return Ok(());
        }
        let layout = self.layout();
        let (states, depths) = self.current(&layout);
        let lin = self.linearize(&layout, &states, &depths, Scope::Oldest, true)?;
        let oldest = self.keyframes[0].id;
        let mut marg: Vec<usize> = (0..DOF).collect();
        marg.extend(
            layout
                .features
                .iter()
                .enumerate()
                .filter(|(_, id)| self.features[*id].anchor == oldest)
                .map(|(k, _)| layout.feature_col(k)),
        );
        let (h, b) = schur_marginalize(&lin.h, &lin.g, &marg);
        // retained: poses 1.., then the features not anchored at the oldest frame
        let keep_pose = (layout.n_poses - 1) * DOF;
        let h = h.view((0, 0), (keep_pose, keep_pose)).into_owned();
        let b = b.rows(0, keep_pose).into_owned();
        let mut h = (&h + h.transpose()) * 0.5;
        clamp_negative_eigenvalues(&mut h);
        self.prior = Some(MarginalizationPrior {
            keyframe_ids: self.keyframes.iter().skip(1).map(|k| k.id).collect(),
            h,
            b,
            linearization: states[1..].to_vec(),
        });
        self.keyframes.pop_front();
        self.links.pop_front();
        self.features.retain(|_, f| f.anchor != oldest);
        Ok(())
    }

    /// Features with an inverse depth that take part in the problem.
    pub fn tracked_features(&self) -> usize {
        self.layout().features.len()
    }
}

/// Solve `(H + μI) δ = −g`, eliminating the diagonal inverse-depth block
/// (indices `n_pose..`) by Schur complement first.
fn solve_damped(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    n_pose: usize,
    damping: f64,
) -> Option<DVector<f64>> {
    let n = h.nrows();
    let m = n - n_pose;
    let hxx = h.view((0, 0), (n_pose, n_pose));
    let hxf = h.view((0, n_pose), (n_pose, m));
    let gx = g.rows(0, n_pose);
    let gf = g.rows(n_pose, m);
    let dinv = DVector::from_iterator(
        m,
        (0..m).map(|k| 1.0 / (h[(n_pose + k, n_pose + k)] + damping.max(1e-9))),
    );
    let mut scaled = hxf.clone_owned();
    for k in 0..m {
        scaled.column_mut(k).scale_mut(dinv[k]);
    }
    let mut reduced = hxx - &scaled * hxf.transpose();
    for k in 0..n_pose {
        reduced[(k, k)] += damping;
    }
    let rhs = -(gx - &scaled * gf);
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    let dx = reduced.cholesky()?.solve(&rhs);
    let df = DVector::from_iterator(
        m,
        (0..m).map(|k| -(gf[k] + hxf.column(k).dot(&dx)) * dinv[k]),
    );
    let mut out = DVector::zeros(n);
    out.rows_mut(0, n_pose).copy_from(&dx);
    out.rows_mut(n_pose, m).copy_from(&df);
    Some(out)
}

/// Schur complement removing the variables `marg`; the rest keep their order.
///
/// Uses a pseudo-inverse of the marginalized block so rank-deficient
/// directions are dropped instead of amplified.
pub fn schur_marginalize(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    marg: &[usize],
) -> (DMatrix<f64>, DVector<f64>) {
    let n = h.nrows();
    let keep: Vec<usize> = (0..n).filter(|i| !marg.contains(i)).collect();
    let hmm = h.select_rows(marg).select_columns(marg);
    let hmr = h.select_rows(marg).select_columns(&keep);
    let hrr = h.select_rows(&keep).select_columns(&keep);
    let gm = g.select_rows(marg);
    let gr = g.select_rows(&keep);
    let hmm = (&hmm + hmm.transpose()) * 0.5;
    let eig = hmm.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let tol = max * 1e-10;
    let inv_vals = eig.eigenvalues.map(|e| if e > tol { 1.0 / e } else { 0.0 });
    let pinv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    let h_new = hrr - hmr.transpose() * &pinv * &hmr;
    let g_new = gr - hmr.transpose() * &pinv * gm;
    (h_new, g_new)
}

fn clamp_negative_eigenvalues(h: &mut DMatrix<f64>) {
    let eig = h.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&e| e >= 0.0) {
        return;
    }
    let vals = eig.eigenvalues.map(|e| e.max(0.0));
    *h = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    *h = (&*h + h.transpose()) * 0.5;
}
