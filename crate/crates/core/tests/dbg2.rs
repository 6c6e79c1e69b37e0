use airsea::hover::*;
use airsea::scenario::load_scenario;

#[test]
fn dbg_p3() {
    let mut sc = load_scenario(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/reference.json")).unwrap();
    sc.current.max_speed = 3.0;
    let cov = SensingCoverage::from_scenario(&sc.system, &sc.requirements);
    let cl = vbsc_cluster(&sc.world.targets, &cov, 8, 1).unwrap();
    let costs = build_cost_matrix(&cl.centroids, sc.world.usv_start, sc.world.usv_end, &sc.current, &sc.system, false);
    let order = solve_visit_order(&costs, OrderMethod::ExactDp).unwrap();
    let plan = refine_hover_plan(&cl, &order, &cov, &sc, RefineOptions::default()).unwrap();
    eprintln!("history ({} iters): {:?}", plan.objective_history.len(),
        plan.objective_history.iter().map(|v| v.round()).collect::<Vec<_>>());
    eprintln!("fly_slots {:?} hover_slots {:?}", plan.fly_slots, plan.hover_slots);
    eprintln!("uav speeds {:?}", plan.uav_speed.iter().map(|v| (v*10.0).round()/10.0).collect::<Vec<_>>());
    eprintln!("usv fly speeds {:?}", plan.usv_fly_speed.iter().map(|v| (v*10.0).round()/10.0).collect::<Vec<_>>());
}
