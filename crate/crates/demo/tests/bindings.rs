use cru_demo::{expm, filter_oscillator, gain};

#[test]
fn rotation_generator_exponentiates_to_rotation() {
    let t = 0.7f64;
    let r = expm(vec![0.0, -1.0, 1.0, 0.0], 2, t).unwrap();
    let want = [t.cos(), -t.sin(), t.sin(), t.cos()];
    assert!(r.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-10));
    assert!(expm(vec![1.0, 2.0, 3.0], 2, 1.0).is_err());
}

#[test]
fn gain_falls_as_observations_get_noisier() {
    let g: Vec<f64> = [0.01, 0.1, 1.0, 10.0].iter().map(|&r| gain(1.0, 2.0, 0.5, r).unwrap()).collect();
    assert!(g.windows(2).all(|w| w[1] < w[0]));
    assert!(gain(1.0, 1.0, 2.0, 0.1).is_err());
}

#[test]
fn filter_beats_raw_observations() {
    let text = filter_oscillator(3, 2.0, 0.1, 0.2, 0.5).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let truth = v["truth"].as_array().unwrap();
    let observed = v["observed"].as_array().unwrap();
    let filtered = v["filtered"].as_array().unwrap();
    assert_eq!(observed.len(), 40);
    let at = |t: f64| truth.iter().find(|p| p[0].as_f64() == Some(t)).unwrap()[1].as_f64().unwrap();
    let (mut raw, mut filt) = (0.0, 0.0);
    for o in observed {
        let t = o[0].as_f64().unwrap();
        let f = filtered.iter().find(|f| f["t"].as_f64() == Some(t)).unwrap();
        assert!(f["gain"].is_f64());
        raw += (o[1].as_f64().unwrap() - at(t)).powi(2);
        filt += (f["mean"].as_f64().unwrap() - at(t)).powi(2);
    }
    assert!(filt < raw, "filtered sse {filt} vs raw {raw}");
    assert!(filtered.iter().filter(|f| f["gain"].is_null()).count() > 100);
    assert!(filter_oscillator(1, 2.0, 0.1, 0.0, 0.5).is_err());
}
