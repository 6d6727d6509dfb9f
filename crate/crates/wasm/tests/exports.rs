use serde_json::Value;
use specmarket_wasm::{clear_json, delay_curves_json, price_curve_json};

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn price_curve_from_config() {
    let config = include_str!("../../../configs/symmetric.json");
    let v = parse(price_curve_json(config, 401, "full").unwrap());
    assert!((v["p_dyn"].as_f64().unwrap() - 1.25).abs() < 5e-3);
    assert!((v["p_sta"].as_f64().unwrap() - 1.5).abs() < 5e-3);
    assert_eq!(v["xs"].as_array().unwrap().len(), 401);
    assert_eq!(v["phi0"].as_array().unwrap().len(), 2);
    assert!(v["residual"].as_f64().unwrap() < 1e-8);
    assert!(price_curve_json(config, 1, "full").is_err());
    assert!(price_curve_json(config, 101, "sideways").is_err());
    assert!(price_curve_json("{}", 101, "full").is_err());
}

#[test]
fn delay_curves_track_closed_form() {
    let v = parse(delay_curves_json(8.0, 1.0, 401).unwrap());
    let xs = v["xs"].as_array().unwrap();
    for (k, x) in xs.iter().enumerate() {
        let x = x.as_f64().unwrap();
        if x.abs() <= 3.5 {
            let solver = v["solver"][k].as_f64().unwrap();
            let oracle = v["oracle"][k].as_f64().unwrap();
            assert!((solver - oracle).abs() < 0.1, "x={x}");
            let gap = v["p_sta"][k].as_f64().unwrap() - oracle;
            assert!((gap - v["gap"][k].as_f64().unwrap()).abs() < 1e-9, "x={x}");
        }
    }
}

#[test]
fn clearing_demo() {
    // two agents, ell = (1, -1), alpha = (1, 2), no supply
    let v = parse(clear_json(&[1.0, -1.0], 1.0, 2.0, 0.0, "full").unwrap());
    assert!((v["theta"].as_f64().unwrap() + 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(v["shorts"], serde_json::json!([1]));
    assert!((v["demands"][0].as_f64().unwrap() - 4.0 / 3.0).abs() < 1e-12);
    assert!(clear_json(&[], 1.0, 1.0, 0.0, "full").is_err());
}
