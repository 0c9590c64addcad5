//! Sample a candidate trajectory set and print each candidate's family,
//! endpoint, and speed profile.
//!
//! Usage: candidate_sampling [speed_m_per_s]

use interplan::trajectory::{sample_candidates, KinematicState, SamplerProfile};

fn main() -> anyhow::Result<()> {
    let speed: f64 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(5.0);
    let origin = KinematicState::new(0.0, 0.0, 0.0, speed);
    let profile = SamplerProfile::default();
    let set = sample_candidates(&origin, &profile)?;

    println!(
        "{} candidates over {:.1} s at dt {:.2} s from v = {speed} m/s",
        set.k(),
        profile.horizon,
        profile.dt
    );
    for (i, (traj, family)) in set.candidates().iter().zip(set.family_tags()).enumerate() {
        let end = traj.end();
        println!(
            "{i:>3} {family:?}: end = ({:7.2}, {:6.2}) heading {:6.3} rad, v {:4.1} -> {:4.1} m/s",
            end.x, end.y, end.heading, traj.start().speed, end.speed
        );
    }
    Ok(())
}
