mod common;

use std::path::Path;

use common::*;
use isoprune::data::{parse_idx_images, parse_idx_labels};
use isoprune::harness::{decode_checkpoint, encode_checkpoint};
use isoprune::nn::{ArchId, Network};
use isoprune::pruning::{apply_plan, make_plan, PrunePlan, PruneSpec};
use isoprune::schedule::{parse_schedule, parse_setting};

#[test]
fn all_eight_settings_parse() {
    for (i, text) in TAB2_SETTINGS.iter().enumerate() {
        let s = parse_setting(text).unwrap();
        assert_eq!(s.orthp, i >= 4, "{text}");
        assert_eq!(s.to_string(), *text);
        let lrs: Vec<f64> = (0..s.schedule.total_epochs()).map(|e| s.schedule.lr_at(e).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn malformed_schedules_are_rejected() {
    for (text, needle) in MALFORMED_SCHEDULES {
        let err = parse_schedule(text).unwrap_err().to_string();
        assert!(err.contains(needle), "{text}: {err}");
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    for arch in ArchId::ALL {
        let mut net = Network::build(arch);
        net.init_orthogonal(4);
        let plan = make_plan(&net, &PruneSpec::default_for(arch, 0.5).unwrap()).unwrap();
        for n in [net.clone(), apply_plan(&net, &plan).unwrap()] {
            let bytes = encode_checkpoint(&n).unwrap();
            assert_eq!(encode_checkpoint(&decode_checkpoint(&bytes).unwrap()).unwrap(), bytes);
        }
    }
}

#[test]
fn plan_text_round_trip() {
    let mut net = Network::build(ArchId::Lenet5Relu);
    net.init_orthogonal(2);
    let plan = make_plan(&net, &PruneSpec::default_for(ArchId::Lenet5Relu, 0.5).unwrap()).unwrap();
    let text = plan.to_string();
    assert_eq!(text.parse::<PrunePlan>().unwrap(), plan);
    assert!(text.starts_with("0: "));
}

#[test]
fn idx_headers() {
    let p = Path::new("fixture");
    let imgs = parse_idx_images(&idx_images(3), p).unwrap();
    assert_eq!(imgs.count, 3);
    assert_eq!(parse_idx_labels(&idx_labels(3), p).unwrap(), vec![0, 1, 2]);

    let mut wrong = idx_images(3);
    wrong[3] = 0x01; // 2049
    assert!(parse_idx_images(&wrong, p).unwrap_err().to_string().contains("magic"));
    let mut wrong = idx_labels(3);
    wrong[3] = 0x03; // 2051
    assert!(parse_idx_labels(&wrong, p).unwrap_err().to_string().contains("magic"));
    let mut junk = idx_images(1);
    junk[2] = 0x09;
    assert!(parse_idx_images(&junk, p).is_err());
}
