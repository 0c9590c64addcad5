//! Trajectory representation, the candidate sampler, and distance metrics.
//!
//! Candidates come from three maneuver families integrated under the unicycle
//! model x' = v cos(th), y' = v sin(th), th' = v k(s), v' = a:
//! straight lines (k = 0), circular arcs (constant k), and Euler spirals
//! (k linear in arclength). Speed is clamped at zero, so no candidate reverses.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Point, Polyline};

/// Pose plus speed at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicState {
    pub x: f64,
    pub y: f64,
    /// Radians, wrapped to (-pi, pi].
    pub heading: f64,
    /// m/s, never negative.
    pub speed: f64,
}

impl KinematicState {
    pub fn new(x: f64, y: f64, heading: f64, speed: f64) -> Self {
        Self {
            x,
            y,
            heading: wrap_angle(heading),
            speed: speed.max(0.0),
        }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// A timestamped waypoint sequence over the planning horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    states: Vec<KinematicState>,
    dt: f64,
}

impl Trajectory {
    pub fn new(states: Vec<KinematicState>, dt: f64) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Config("trajectory must be non-empty".into()));
        }
        if dt <= 0.0 {
            return Err(Error::Config("trajectory dt must be positive".into()));
        }
        Ok(Self { states, dt })
    }

    pub fn states(&self) -> &[KinematicState] {
        &self.states
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.dt * (self.states.len() - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn start(&self) -> &KinematicState {
        &self.states[0]
    }

    pub fn end(&self) -> &KinematicState {
        self.states.last().expect("non-empty")
    }
}

/// Maneuver family a candidate was sampled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManeuverFamily {
    Straight,
    Arc,
    Spiral,
}

/// The K sampled candidates for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    candidates: Vec<Trajectory>,
    family_tags: Vec<ManeuverFamily>,
    origin: KinematicState,
}

impl CandidateSet {
    pub fn candidates(&self) -> &[Trajectory] {
        &self.candidates
    }

    pub fn family_tags(&self) -> &[ManeuverFamily] {
        &self.family_tags
    }

    pub fn origin(&self) -> &KinematicState {
        &self.origin
    }

    pub fn k(&self) -> usize {
        self.candidates.len()
    }

    pub fn get(&self, index: usize) -> Result<&Trajectory> {
        self.candidates
            .get(index)
            .ok_or_else(|| Error::IndexOutOfRange(format!("candidate {index} of {}", self.k())))
    }
}

/// Axis-aligned footprint of an agent's body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub length: f64,
    pub width: f64,
}

impl BoundingBox {
    pub fn new(length: f64, width: f64) -> Result<Self> {
        if length <= 0.0 || width <= 0.0 {
            return Err(Error::Config("bounding box sides must be positive".into()));
        }
        Ok(Self { length, width })
    }
}

/// Grids and discretization driving the candidate sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerProfile {
    /// m/s^2, used by the straight family.
    pub accelerations: Vec<f64>,
    /// 1/m, constant curvature of the arc family.
    pub curvatures: Vec<f64>,
    /// 1/m^2, curvature growth per meter of the spiral family.
    pub curvature_rates: Vec<f64>,
    pub dt: f64,
    pub horizon: f64,
    pub k: usize,
}

impl Default for SamplerProfile {
    fn default() -> Self {
        Self {
            accelerations: vec![-4.0, -2.0, 0.0, 1.0, 2.0],
            curvatures: vec![0.0, 0.02, -0.02, 0.05, -0.05, 0.1, -0.1],
            curvature_rates: vec![0.005, -0.005, 0.01, -0.01],
            dt: 0.5,
            horizon: 4.0,
            k: 24,
        }
    }
}

impl SamplerProfile {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("sampler profile: K must be >= 1".into()));
        }
        if self.dt <= 0.0 {
            return Err(Error::Config("sampler profile: dt must be positive".into()));
        }
        if self.horizon <= 0.0 {
            return Err(Error::Config("sampler profile: horizon must be positive".into()));
        }
        if self.accelerations.is_empty()
            && self.curvatures.is_empty()
            && self.curvature_rates.is_empty()
        {
            return Err(Error::Config("sampler profile: all grids empty".into()));
        }
        let finite = self
            .accelerations
            .iter()
            .chain(&self.curvatures)
            .chain(&self.curvature_rates)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("sampler profile: non-finite grid entry".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Maneuver parameters for one integration run.
#[derive(Debug, Clone, Copy)]
struct Maneuver {
    accel: f64,
    kappa0: f64,
    kappa_rate: f64,
    family: ManeuverFamily,
}

/// Midpoint substeps per waypoint interval for the spiral family.
const SUBSTEPS: usize = 40;

/// Arclength covered over `dt` at constant acceleration with the speed
/// clamped at zero, plus the end speed.
fn advance_speed(v: f64, accel: f64, dt: f64) -> (f64, f64) {
    let v_end = v + accel * dt;
    if v_end >= 0.0 {
        (v * dt + 0.5 * accel * dt * dt, v_end)
    } else {
        // decelerates to a stop inside the interval
        let t_stop = v / (-accel);
        (0.5 * v * t_stop, 0.0)
    }
}

/// Integrate the unicycle model from `origin` for one maneuver.
///
/// Straights and arcs step in closed form (waypoints lie exactly on the
/// analytic line or circle); spirals use the midpoint method with `SUBSTEPS`
/// substeps per waypoint interval.
fn integrate(origin: &KinematicState, m: &Maneuver, dt: f64, steps: usize) -> Trajectory {
    let mut x = origin.x;
    let mut y = origin.y;
    let mut th = origin.heading; // kept unwrapped between steps
    let mut v = origin.speed;
    let mut s = 0.0;
    let mut states = Vec::with_capacity(steps + 1);
    states.push(KinematicState::new(x, y, th, v));
    let h = dt / SUBSTEPS as f64;
    for _ in 0..steps {
        if m.kappa_rate == 0.0 {
            let (ds, v_end) = advance_speed(v, m.accel, dt);
            if m.kappa0.abs() < 1e-12 {
                x += ds * th.cos();
                y += ds * th.sin();
            } else {
                let th_new = th + m.kappa0 * ds;
                x += (th_new.sin() - th.sin()) / m.kappa0;
                y -= (th_new.cos() - th.cos()) / m.kappa0;
                th = th_new;
            }
            v = v_end;
        } else {
            for _ in 0..SUBSTEPS {
                // midpoint method on (x, y, heading, speed, arclength)
                let v_half = (v + 0.5 * h * m.accel).max(0.0);
                let s_half = s + 0.5 * h * v;
                let kappa_half = m.kappa0 + m.kappa_rate * s_half;
                let th_half = th + 0.5 * h * v * (m.kappa0 + m.kappa_rate * s);
                x += h * v_half * th_half.cos();
                y += h * v_half * th_half.sin();
                th += h * v_half * kappa_half;
                s += h * v_half;
                v = (v + h * m.accel).max(0.0);
            }
        }
        states.push(KinematicState::new(x, y, th, v));
    }
    Trajectory::new(states, dt).expect("steps >= 1 and dt > 0")
}

fn trajectories_equal(a: &Trajectory, b: &Trajectory) -> bool {
    a.len() == b.len()
        && a.states().iter().zip(b.states()).all(|(p, q)| {
            (p.x - q.x).abs() < 1e-9
                && (p.y - q.y).abs() < 1e-9
                && (p.heading - q.heading).abs() < 1e-9
                && (p.speed - q.speed).abs() < 1e-9
        })
}

/// Sample exactly K distinct candidates from the three maneuver families.
///
/// Families are interleaved round-robin before pruning so the kept set stays
/// diverse; if the grids produce fewer than K distinct trajectories the set is
/// padded with straight candidates at bisected accelerations.
pub fn sample_candidates(origin: &KinematicState, profile: &SamplerProfile) -> Result<CandidateSet> {
    profile.validate()?;
    let steps = profile.steps();
    if steps == 0 {
        return Err(Error::Config("sampler profile: horizon shorter than dt".into()));
    }

    let straights: Vec<Maneuver> = profile
        .accelerations
        .iter()
        .map(|&a| Maneuver {
            accel: a,
            kappa0: 0.0,
            kappa_rate: 0.0,
            family: ManeuverFamily::Straight,
        })
        .collect();
    // Curved families pair every curvature (or curvature rate) with every
    // acceleration, mildest accelerations first, so that turning while
    // speeding up or slowing down stays available when the candidate budget
    // truncates the list. Without the acceleration pairing, a stopped
    // vehicle's curved candidates all integrate to the stationary point and
    // collapse in deduplication, leaving it unable to turn from rest.
    let mut accel_order: Vec<f64> = profile.accelerations.clone();
    accel_order.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).expect("finite accels"));
    let arcs: Vec<Maneuver> = accel_order
        .iter()
        .flat_map(|&a| {
            profile.curvatures.iter().map(move |&k0| Maneuver {
                accel: a,
                kappa0: k0,
                kappa_rate: 0.0,
                family: ManeuverFamily::Arc,
            })
        })
        .collect();
    let spirals: Vec<Maneuver> = accel_order
        .iter()
        .flat_map(|&a| {
            profile.curvature_rates.iter().map(move |&kr| Maneuver {
                accel: a,
                kappa0: 0.0,
                kappa_rate: kr,
                family: ManeuverFamily::Spiral,
            })
        })
        .collect();

    // round-robin interleave
    let mut maneuvers = Vec::new();
    let longest = straights.len().max(arcs.len()).max(spirals.len());
    for i in 0..longest {
        for fam in [&straights, &arcs, &spirals] {
            if let Some(m) = fam.get(i) {
                maneuvers.push(*m);
            }
        }
    }

    let mut candidates: Vec<Trajectory> = Vec::new();
    let mut tags: Vec<ManeuverFamily> = Vec::new();
    for m in &maneuvers {
        if candidates.len() == profile.k {
            break;
        }
        let traj = integrate(origin, m, profile.dt, steps);
        if !candidates.iter().any(|c| trajectories_equal(c, &traj)) {
            candidates.push(traj);
            tags.push(m.family);
        }
    }

    // pad with straights at bisected accelerations
    if candidates.len() < profile.k {
        let a_lo = profile
            .accelerations
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
            .min(-1.0);
        let a_hi = profile
            .accelerations
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
            .max(1.0);
        'outer: for level in 1..=12u32 {
            let denom = 1u32 << level;
            for num in (1..denom).step_by(2) {
                let a = a_lo + (a_hi - a_lo) * num as f64 / denom as f64;
                let m = Maneuver {
                    accel: a,
                    kappa0: 0.0,
                    kappa_rate: 0.0,
                    family: ManeuverFamily::Straight,
                };
                let traj = integrate(origin, &m, profile.dt, steps);
                if !candidates.iter().any(|c| trajectories_equal(c, &traj)) {
                    candidates.push(traj);
                    tags.push(ManeuverFamily::Straight);
                    if candidates.len() == profile.k {
                        break 'outer;
                    }
                }
            }
        }
    }

    if candidates.len() < profile.k {
        return Err(Error::Config(format!(
            "sampler produced only {} distinct candidates, K = {} requested",
            candidates.len(),
            profile.k
        )));
    }

    Ok(CandidateSet {
        candidates,
        family_tags: tags,
        origin: *origin,
    })
}

/// Mean per-waypoint Euclidean distance between aligned trajectories.
pub fn trajectory_distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "trajectory_distance: {} vs {} steps",
            a.len(),
            b.len()
        )));
    }
    let sum: f64 = a
        .states()
        .iter()
        .zip(b.states())
        .map(|(p, q)| p.position().dist(q.position()))
        .sum();
    Ok(sum / a.len() as f64)
}

/// Mean point-to-polyline projection distance of a trajectory to a route.
pub fn route_deviation(t: &Trajectory, route: &Polyline) -> f64 {
    let sum: f64 = t
        .states()
        .iter()
        .map(|s| route.distance_to(s.position()))
        .sum();
    sum / t.len() as f64
}

/// Indices of candidates within `epsilon` of the ground truth (the near set U).
pub fn near_set(gt: &Trajectory, set: &CandidateSet, epsilon: f64) -> Result<BTreeSet<usize>> {
    let mut out = BTreeSet::new();
    for (i, c) in set.candidates().iter().enumerate() {
        if trajectory_distance(gt, c)? < epsilon {
            out.insert(i);
        }
    }
    Ok(out)
}

/// Index of the candidate nearest to `gt`.
pub fn nearest_candidate(gt: &Trajectory, set: &CandidateSet) -> Result<usize> {
    let mut best = (0usize, f64::INFINITY);
    for (i, c) in set.candidates().iter().enumerate() {
        let d = trajectory_distance(gt, c)?;
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn origin() -> KinematicState {
        KinematicState::new(0.0, 0.0, 0.0, 5.0)
    }

    fn one_maneuver(m: Maneuver) -> Trajectory {
        integrate(&origin(), &m, 0.5, 8)
    }

    #[test]
    fn straight_constant_velocity() {
        let t = one_maneuver(Maneuver {
            accel: 0.0,
            kappa0: 0.0,
            kappa_rate: 0.0,
            family: ManeuverFamily::Straight,
        });
        for (k, s) in t.states().iter().enumerate() {
            assert_relative_eq!(s.x, 2.5 * k as f64, epsilon = 1e-12);
            assert_relative_eq!(s.y, 0.0, epsilon = 1e-12);
            assert_relative_eq!(s.speed, 5.0);
        }
    }

    #[test]
    fn arc_waypoints_on_circle() {
        let t = one_maneuver(Maneuver {
            accel: 0.0,
            kappa0: 0.1,
            kappa_rate: 0.0,
            family: ManeuverFamily::Arc,
        });
        // constant curvature 0.1 from (0,0,heading 0): circle center (0, 10), radius 10
        for s in t.states() {
            let r = s.position().dist(Point::new(0.0, 10.0));
            assert!((r - 10.0).abs() < 1e-6, "radius residual {}", (r - 10.0).abs());
        }
    }

    #[test]
    fn spiral_matches_fine_reference() {
        let t = one_maneuver(Maneuver {
            accel: 0.0,
            kappa0: 0.0,
            kappa_rate: 0.01,
            family: ManeuverFamily::Spiral,
        });
        // 1000-substep midpoint reference over the same 4 s horizon
        let n = 1000;
        let h = 4.0 / n as f64;
        let (mut x, mut y, mut th, mut s) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let v = 5.0;
        for _ in 0..n {
            let s_half = s + 0.5 * h * v;
            let th_half = th + 0.5 * h * v * (0.01 * s);
            x += h * v * th_half.cos();
            y += h * v * th_half.sin();
            th += h * v * (0.01 * s_half);
            s += h * v;
        }
        let end = t.end();
        let err = ((end.x - x).powi(2) + (end.y - y).powi(2)).sqrt();
        assert!(err < 1e-3, "spiral endpoint error {err}");
    }

    #[test]
    fn spiral_curvature_affine_in_arclength() {
        let t = one_maneuver(Maneuver {
            accel: 0.0,
            kappa0: 0.02,
            kappa_rate: 0.01,
            family: ManeuverFamily::Spiral,
        });
        // fit curvature = d heading / d arclength against arclength
        let mut pts = Vec::new();
        let mut s_acc = 0.0;
        let states = t.states();
        for w in states.windows(2) {
            let ds = w[0].position().dist(w[1].position());
            let dth = wrap_angle(w[1].heading - w[0].heading);
            if ds > 1e-9 {
                pts.push((s_acc + 0.5 * ds, dth / ds));
            }
            s_acc += ds;
        }
        // least-squares line fit, check residual
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let intercept = (sy - slope * sx) / n;
        for (s, k) in &pts {
            assert!((k - (intercept + slope * s)).abs() < 1e-3);
        }
        assert_relative_eq!(slope, 0.01, epsilon = 1e-3);
    }

    #[test]
    fn sampler_returns_k_distinct() {
        let profile = SamplerProfile::default();
        let set = sample_candidates(&origin(), &profile).unwrap();
        assert_eq!(set.k(), profile.k);
        for i in 0..set.k() {
            for j in (i + 1)..set.k() {
                assert!(!trajectories_equal(&set.candidates()[i], &set.candidates()[j]));
            }
        }
        for c in set.candidates() {
            assert_eq!(c.len(), 9);
            assert_relative_eq!(c.horizon(), 4.0);
            assert_eq!(c.start(), set.origin());
        }
    }

    #[test]
    fn sampler_pads_from_standstill() {
        let stopped = KinematicState::new(3.0, 1.0, 0.5, 0.0);
        let profile = SamplerProfile::default();
        let set = sample_candidates(&stopped, &profile).unwrap();
        assert_eq!(set.k(), profile.k);
    }

    #[test]
    fn sampler_deterministic() {
        let a = sample_candidates(&origin(), &SamplerProfile::default()).unwrap();
        let b = sample_candidates(&origin(), &SamplerProfile::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampler_rejects_bad_profiles() {
        let mut p = SamplerProfile::default();
        p.k = 0;
        assert!(sample_candidates(&origin(), &p).is_err());
        let mut p = SamplerProfile::default();
        p.dt = 0.0;
        assert!(sample_candidates(&origin(), &p).is_err());
        let mut p = SamplerProfile::default();
        p.accelerations.clear();
        p.curvatures.clear();
        p.curvature_rates.clear();
        assert!(sample_candidates(&origin(), &p).is_err());
    }

    #[test]
    fn endpoint_converges_as_dt_halves() {
        let m = Maneuver {
            accel: 1.0,
            kappa0: 0.05,
            kappa_rate: 0.005,
            family: ManeuverFamily::Spiral,
        };
        let coarse = integrate(&origin(), &m, 0.5, 8);
        let fine = integrate(&origin(), &m, 0.25, 16);
        let finest = integrate(&origin(), &m, 0.125, 32);
        let e1 = coarse.end().position().dist(finest.end().position());
        let e2 = fine.end().position().dist(finest.end().position());
        assert!(e2 < e1);
        assert!(e1 < 0.5 * 0.5 * 20.0); // O(dt) bound with generous constant
    }

    #[test]
    fn distance_metric_cases() {
        let a = one_maneuver(Maneuver {
            accel: 0.0,
            kappa0: 0.0,
            kappa_rate: 0.0,
            family: ManeuverFamily::Straight,
        });
        assert_relative_eq!(trajectory_distance(&a, &a).unwrap(), 0.0);
        let shifted = Trajectory::new(
            a.states()
                .iter()
                .map(|s| KinematicState::new(s.x + 3.0, s.y + 4.0, s.heading, s.speed))
                .collect(),
            a.dt(),
        )
        .unwrap();
        assert_relative_eq!(trajectory_distance(&a, &shifted).unwrap(), 5.0);
        assert_relative_eq!(
            trajectory_distance(&a, &shifted).unwrap(),
            trajectory_distance(&shifted, &a).unwrap()
        );
        let short = Trajectory::new(a.states()[..4].to_vec(), a.dt()).unwrap();
        assert!(trajectory_distance(&a, &short).is_err());
    }

    #[test]
    fn distance_matches_hand_sum_on_sampled_pair() {
        let set = sample_candidates(&origin(), &SamplerProfile::default()).unwrap();
        let a = &set.candidates()[0];
        let b = &set.candidates()[5];
        let hand: f64 = a
            .states()
            .iter()
            .zip(b.states())
            .map(|(p, q)| ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt())
            .sum::<f64>()
            / a.len() as f64;
        assert_relative_eq!(trajectory_distance(a, b).unwrap(), hand, epsilon = 1e-12);
    }

    #[test]
    fn route_deviation_cases() {
        let route = Polyline::new(vec![Point::new(-10.0, 0.0), Point::new(100.0, 0.0)]).unwrap();
        let on_route = one_maneuver(Maneuver {
            accel: 0.0,
            kappa0: 0.0,
            kappa_rate: 0.0,
            family: ManeuverFamily::Straight,
        });
        assert_relative_eq!(route_deviation(&on_route, &route), 0.0, epsilon = 1e-12);
        let offset = Trajectory::new(
            on_route
                .states()
                .iter()
                .map(|s| KinematicState::new(s.x, s.y + 2.0, s.heading, s.speed))
                .collect(),
            on_route.dt(),
        )
        .unwrap();
        assert_relative_eq!(route_deviation(&offset, &route), 2.0);
    }

    #[test]
    fn route_deviation_matches_densified_oracle() {
        // curved trajectory against an L-shaped route
        let t = one_maneuver(Maneuver {
            accel: 0.0,
            kappa0: 0.05,
            kappa_rate: 0.0,
            family: ManeuverFamily::Arc,
        });
        let route = Polyline::new(vec![
            Point::new(0.0, 0.0),
            Point::new(15.0, 0.0),
            Point::new(15.0, 20.0),
        ])
        .unwrap();
        // brute force: densify the route into 10^4 points
        let verts = route.vertices();
        let mut dense = Vec::new();
        for w in verts.windows(2) {
            for k in 0..5000 {
                let tt = k as f64 / 5000.0;
                dense.push(w[0].add(w[1].sub(w[0]).scale(tt)));
            }
        }
        dense.push(*verts.last().unwrap());
        let brute: f64 = t
            .states()
            .iter()
            .map(|s| {
                dense
                    .iter()
                    .map(|p| p.dist(s.position()))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / t.len() as f64;
        assert!((route_deviation(&t, &route) - brute).abs() < 1e-3);
    }

    #[test]
    fn near_set_cases() {
        let set = sample_candidates(&origin(), &SamplerProfile::default()).unwrap();
        let gt = set.candidates()[3].clone();
        assert!(near_set(&gt, &set, 0.0).unwrap().is_empty());
        assert_eq!(near_set(&gt, &set, f64::INFINITY).unwrap().len(), set.k());
        let eps = 0.5;
        let got = near_set(&gt, &set, eps).unwrap();
        for (i, c) in set.candidates().iter().enumerate() {
            let d = trajectory_distance(&gt, c).unwrap();
            assert_eq!(got.contains(&i), d < eps);
        }
        assert!(got.contains(&nearest_candidate(&gt, &set).unwrap()));
    }

    #[test]
    fn triangle_inequality_over_sampled_candidates() {
        let set = sample_candidates(&origin(), &SamplerProfile::default()).unwrap();
        let cs = set.candidates();
        for i in 0..cs.len() {
            for j in 0..cs.len() {
                for k in 0..cs.len() {
                    let dij = trajectory_distance(&cs[i], &cs[j]).unwrap();
                    let djk = trajectory_distance(&cs[j], &cs[k]).unwrap();
                    let dik = trajectory_distance(&cs[i], &cs[k]).unwrap();
                    assert!(dik <= dij + djk + 1e-12);
                }
            }
        }
    }
}
