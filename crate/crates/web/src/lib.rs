//! Browser bindings. Every export takes plain numbers and strings and returns
//! a JSON document; failures come back as `{"error": "..."}`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::wasm_bindgen;

use rallyrecon::calib::{estimate_focal, solve_pnp_fixed_f, total_reprojection_error, CalibConfig};
use rallyrecon::camgeom::{CalibratedCamera, Intrinsics, TableModel};
use rallyrecon::physics::PhysParams;
use rallyrecon::pipeline::{analyze_rally, PipelineConfig};
use rallyrecon::rallyseg::RallyTrack;
use rallyrecon::synthbench::{
    mix_seed, random_rally, render_features, render_track, NoiseModel, Rally, ShotEnvelope, ViewName, ViewPreset,
    PRESET_HEIGHT, PRESET_WIDTH,
};

const SHOTS: usize = 3;
const PATH_RATE: f64 = 100.0;

#[derive(Serialize)]
struct Rendered {
    view: ViewName,
    width: u32,
    height: u32,
    /// `[t, x, y, z]`, m.
    truth: Vec<[f64; 4]>,
    bounces: Vec<[f64; 4]>,
    /// `[t, u, v]`, px.
    detections: Vec<[f64; 3]>,
}

#[derive(Serialize)]
struct Reconstructed {
    #[serde(flatten)]
    scene: Rendered,
    results: Vec<BounceOut>,
}

#[derive(Serialize)]
struct BounceOut {
    t_star: f64,
    success: bool,
    error: Option<String>,
    speed: Option<f64>,
    spin: Option<f64>,
    reproj_rmse: Option<f64>,
    /// Mean distance to the true path at the observation times, cm.
    mae_cm: Option<f64>,
    path: Vec<[f64; 4]>,
}

#[derive(Serialize)]
struct FocalProfile {
    true_f: f64,
    estimated_f: Option<f64>,
    error: Option<String>,
    /// `[f, E(f)]` with E the summed reprojection error, px.
    profile: Vec<[f64; 2]>,
}

fn json<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e),
    }
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

fn view_name(view: &str) -> Result<ViewName, String> {
    serde_json::from_value(serde_json::Value::String(view.to_lowercase()))
        .map_err(|_| format!("unknown view {view:?}: expected side, oblique or back"))
}

fn rally(seed: u64) -> Rally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_rally(&mut rng, SHOTS, &ShotEnvelope::default(), &PhysParams::table_tennis(), &TableModel::ittf())
}

fn render(seed: u64, view: &str, noisy: bool) -> Result<(Rally, CalibratedCamera, Rendered, RallyTrack), String> {
    let name = view_name(view)?;
    let table = TableModel::ittf();
    let rally = rally(seed);
    let cam = ViewPreset::new(name, &table).camera;
    let noise = if noisy { NoiseModel::standard().with_seed(mix_seed(&[seed, name as u64])) } else { NoiseModel::none() };
    let track = render_track(&rally.truth, &cam, 25.0, 0.5, &noise);
    let scene = Rendered {
        view: name,
        width: PRESET_WIDTH,
        height: PRESET_HEIGHT,
        truth: rally.truth.sample(PATH_RATE).iter().map(|s| [s.t, s.p.x, s.p.y, s.p.z]).collect(),
        bounces: rally.truth.bounces.iter().map(|b| [b.t, b.p.x, b.p.y, b.p.z]).collect(),
        detections: track.detections().iter().map(|d| [d.t, d.u, d.v]).collect(),
    };
    Ok((rally, cam, scene, track))
}

pub fn simulate_rally_json(seed: u64, view: &str, noisy: bool) -> String {
    json(render(seed, view, noisy).map(|r| r.2))
}

pub fn reconstruct_rally_json(seed: u64, view: &str, noisy: bool) -> String {
    json(render(seed, view, noisy).and_then(|(rally, cam, scene, track)| {
        let analysis = analyze_rally(&track, &[(0.0, cam)], &PhysParams::table_tennis(), &PipelineConfig::default())
            .map_err(|e| e.to_string())?;
        let results = analysis
            .bounces
            .iter()
            .map(|b| match &b.result {
                Ok(r) => {
                    let err: f64 = r
                        .observation_times
                        .iter()
                        .zip(&r.fitted_positions)
                        .map(|(&t, p)| (rally.truth.state_at(t).p - p).norm())
                        .sum();
                    BounceOut {
                        t_star: r.t_star,
                        success: r.is_success(rallyrecon::recon::SUCCESS_RMSE),
                        error: None,
                        speed: Some(r.v_minus.norm()),
                        spin: Some(r.w_minus.norm()),
                        reproj_rmse: Some(r.reproj_rmse),
                        mae_cm: Some(100.0 * err / r.observation_times.len().max(1) as f64),
                        path: r.trajectory.iter().map(|s| [s.t, s.p.x, s.p.y, s.p.z]).collect(),
                    }
                }
                Err(e) => BounceOut {
                    t_star: b.event.t_star,
                    success: false,
                    error: Some(e.to_string()),
                    speed: None,
                    spin: None,
                    reproj_rmse: None,
                    mae_cm: None,
                    path: Vec::new(),
                },
            })
            .collect();
        Ok(Reconstructed { scene, results })
    }))
}

pub fn focal_profile_json(seed: u64, view: &str, sigma_px: f64) -> String {
    json((|| {
        if !(sigma_px >= 0.0 && sigma_px.is_finite()) {
            return Err(format!("pixel noise must be >= 0, got {sigma_px}"));
        }
        let name = view_name(view)?;
        let table = TableModel::ittf();
        let cam = ViewPreset::new(name, &table).camera;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corrs = render_features(&cam, &table, sigma_px, &mut rng).ok_or("table leaves the image")?;
        let cfg = CalibConfig { width: PRESET_WIDTH, height: PRESET_HEIGHT, ..CalibConfig::default() };
        let profile = (0..=60)
            .filter_map(|k| {
                let f = 300.0 * (5000.0f64 / 300.0).powf(k as f64 / 60.0);
                let intr = Intrinsics::new(f, cfg.width, cfg.height).ok()?;
                let sol = solve_pnp_fixed_f(&corrs, &intr, None).ok()?;
                let e = total_reprojection_error(&corrs, &CalibratedCamera::new(intr, sol.pose));
                e.is_finite().then_some([f, e])
            })
            .collect();
        let est = estimate_focal(&corrs, &table, &cfg);
        Ok(FocalProfile {
            true_f: cam.intrinsics.f,
            estimated_f: est.as_ref().ok().map(|e| e.camera.intrinsics.f),
            error: est.err().map(|e| e.to_string()),
            profile,
        })
    })())
}

/// A three-shot rally rendered from a preset view.
#[wasm_bindgen]
pub fn simulate_rally(seed: u32, view: &str, noisy: bool) -> String {
    simulate_rally_json(seed as u64, view, noisy)
}

/// The same rally, reconstructed bounce by bounce.
#[wasm_bindgen]
pub fn reconstruct_rally(seed: u32, view: &str, noisy: bool) -> String {
    reconstruct_rally_json(seed as u64, view, noisy)
}

/// Reprojection error of the table features against focal length.
#[wasm_bindgen]
pub fn focal_profile(seed: u32, view: &str, sigma_px: f64) -> String {
    focal_profile_json(seed as u64, view, sigma_px)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn simulation_has_detections_inside_the_image() {
        let v = parse(&simulate_rally_json(3, "Side", false));
        let dets = v["detections"].as_array().unwrap();
        assert!(dets.len() > 20);
        for d in dets {
            let (u, v) = (d[1].as_f64().unwrap(), d[2].as_f64().unwrap());
            assert!((0.0..1280.0).contains(&u) && (0.0..720.0).contains(&v));
        }
        assert!(!v["bounces"].as_array().unwrap().is_empty());
    }

    #[test]
    fn reconstruction_reports_every_bounce() {
        let v = parse(&reconstruct_rally_json(3, "side", false));
        let results = v["results"].as_array().unwrap();
        assert!(!results.is_empty());
        let ok = results.iter().filter(|r| r["success"].as_bool().unwrap()).count();
        assert!(ok >= results.len() - 1);
        for r in results.iter().filter(|r| r["success"].as_bool().unwrap()) {
            assert!(r["mae_cm"].as_f64().unwrap() < 5.0);
        }
    }

    #[test]
    fn focal_profile_bottoms_out_near_truth() {
        let v = parse(&focal_profile_json(1, "oblique", 0.0));
        let best = v["profile"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| (p[0].as_f64().unwrap(), p[1].as_f64().unwrap()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let f = v["true_f"].as_f64().unwrap();
        assert!((best.0 / f - 1.0).abs() < 0.05, "{best:?}");
        assert!((v["estimated_f"].as_f64().unwrap() / f - 1.0).abs() < 1e-3);
    }

    #[test]
    fn bad_input_is_an_error_document() {
        assert!(parse(&simulate_rally_json(0, "overhead", false))["error"].is_string());
        assert!(parse(&focal_profile_json(0, "side", -1.0))["error"].is_string());
    }
}
