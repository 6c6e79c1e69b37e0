use airsea::pipeline::run::run_mission;
use airsea::pipeline::Strategy;
use airsea::scenario::load_scenario;

#[test]
fn dbg_strategies() {
    let mut sc = load_scenario(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/reference.json")).unwrap();
    for current in [0.0, 3.0] {
        sc.current.max_speed = current;
        for strat in [Strategy::Proposed, Strategy::LeaderFollower, Strategy::Sequential] {
            let t = std::time::Instant::now();
            match run_mission(&sc, strat, 1) {
                Ok(r) => {
                    let fly_usv: f64 = (1..=r.trajectory.num_slots())
                        .filter(|&i| r.trajectory.slots[i].mode == airsea::mission::SlotMode::Flying)
                        .map(|i| {
                            let rel = r.trajectory.usv_velocity(i)
                                - airsea::scenario::current_at(&sc.current, r.trajectory.slots[i].usv);
                            sc.system.usv_drag_kg * rel.norm_squared()
                        })
                        .sum();
                    eprintln!(
                        "cur={current} {:<16} {:>7.1} kJ  {:>4} slots (hover {:>3.0} s)  E={:<2} uavP {:>5.1} tx {:>4.1} usv {:>5.1} (fly {:>5.1}) [{:?}]",
                        strat.name(), r.report.total_j / 1e3, r.trajectory.num_slots(),
                        r.report.hovering_s, r.report.hover_points,
                        r.report.uav_propulsion_j / 1e3, r.report.uav_transmit_j / 1e3,
                        r.report.usv_propulsion_j / 1e3, fly_usv / 1e3, t.elapsed()
                    );
                }
                Err(e) => eprintln!("cur={current} {:<16} FAILED after {:?}: {e}", strat.name(), t.elapsed()),
            }
        }
    }
}
