use poold_web::{fluid_rows, loss_rows, reflected_rows, scaled_loss_limit};

#[test]
fn fluid_rows_end_at_the_fixed_point() {
    let rows = fluid_rows(2.5, 5, 30.0, 1e-3).unwrap();
    assert_eq!(rows.len() % 6, 0);
    assert!(rows.len() / 6 <= 2001);
    let last = &rows[rows.len() - 6..];
    assert!((last[0] - 30.0).abs() < 1e-9);
    for (x, want) in last[1..].iter().zip([1.0, 1.0, 0.5, 0.0, 0.0]) {
        assert!((x - want).abs() < 1e-3, "{last:?}");
    }
    assert!(fluid_rows(2.5, 0, 1.0, 1e-3).is_err());
    assert!(fluid_rows(-1.0, 3, 1.0, 1e-3).is_err());
}

#[test]
fn noiseless_reflected_rows_follow_the_ode() {
    let rows = reflected_rows(3.0, 1, 5.0, 1e-4, -1.0).unwrap();
    for r in rows.chunks(4) {
        assert!((r[1] - 3.0 * (1.0 - (-r[0]).exp())).abs() < 1e-3, "{r:?}");
    }
    let noisy = reflected_rows(0.5, 1, 5.0, 1e-3, 4.0).unwrap();
    assert!(noisy.chunks(4).all(|r| r[1] >= 0.0 && r[3] >= 0.0));
    assert_eq!(noisy, reflected_rows(0.5, 1, 5.0, 1e-3, 4.0).unwrap());
}

#[test]
fn loss_rows_are_ordered_bounds() {
    let rows = loss_rows(400, 1, 1.0).unwrap();
    let first = &rows[..4];
    let last = &rows[rows.len() - 4..];
    assert_eq!(first[0], 1.0);
    assert_eq!(last[0], 400.0);
    for r in rows.chunks(4) {
        assert!(r[1] <= r[2] + 1e-15, "{r:?}");
    }
    // the sample size only moves the upper bound
    assert!(last[2] < first[2]);
    assert!((first[1] - last[1]).abs() < 1e-15);
    assert!((scaled_loss_limit(1, 1.0) - 0.2876).abs() < 1e-4);
    assert!(scaled_loss_limit(0, 1.0).is_nan());
}
