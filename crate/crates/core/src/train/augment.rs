use rand::Rng;

/// The five shifts used for augmentation: none, or one pixel along a single axis.
pub const SHIFTS: [(isize, isize); 5] = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)];

/// Translates a square row-major image by `(dx, dy)` pixels (positive `dx`
/// moves content right, positive `dy` down). Vacated pixels are zero.
pub fn shift_image(image: &[f64], side: usize, dx: isize, dy: isize) -> Vec<f64> {
    assert_eq!(image.len(), side * side, "image is not square");
    let mut out = vec![0.0; image.len()];
    let side_i = side as isize;
    for r in 0..side_i {
        let src_r = r - dy;
        if !(0..side_i).contains(&src_r) {
            continue;
        }
        for c in 0..side_i {
            let src_c = c - dx;
            if (0..side_i).contains(&src_c) {
                out[(r * side_i + c) as usize] = image[(src_r * side_i + src_c) as usize];
            }
        }
    }
    out
}

/// Random one-pixel shift drawn uniformly from [`SHIFTS`].
pub fn shift_augment<R: Rng + ?Sized>(image: &[f64], side: usize, rng: &mut R) -> Vec<f64> {
    let (dx, dy) = SHIFTS[rng.gen_range(0..SHIFTS.len())];
    shift_image(image, side, dx, dy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pattern(side: usize) -> Vec<f64> {
        (0..side * side).map(|i| (i % 7) as f64 + 1.0).collect()
    }

    #[test]
    fn zero_shift_is_identity() {
        let img = pattern(28);
        assert_eq!(shift_image(&img, 28, 0, 0), img);
    }

    #[test]
    fn right_then_left_loses_one_column() {
        let img = pattern(5);
        let back = shift_image(&shift_image(&img, 5, 1, 0), 5, -1, 0);
        for r in 0..5 {
            for c in 0..5 {
                let expected = if c == 4 { 0.0 } else { img[r * 5 + c] };
                assert_eq!(back[r * 5 + c], expected);
            }
        }
    }

    #[test]
    fn mass_changes_only_by_truncated_border() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let img: Vec<f64> = (0..28 * 28).map(|_| rng.gen::<f64>()).collect();
            let total: f64 = img.iter().sum();
            for &(dx, dy) in &SHIFTS {
                let shifted: f64 = shift_image(&img, 28, dx, dy).iter().sum();
                let lost: f64 = match (dx, dy) {
                    (1, 0) => (0..28).map(|r| img[r * 28 + 27]).sum(),
                    (-1, 0) => (0..28).map(|r| img[r * 28]).sum(),
                    (0, 1) => img[27 * 28..].iter().sum(),
                    (0, -1) => img[..28].iter().sum(),
                    _ => 0.0,
                };
                assert!((total - lost - shifted).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn augment_draws_every_shift() {
        let img = pattern(28);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..200 {
            let out = shift_augment(&img, 28, &mut rng);
            let idx = SHIFTS.iter().position(|&(dx, dy)| shift_image(&img, 28, dx, dy) == out).unwrap();
            seen.insert(idx);
        }
        assert_eq!(seen.len(), 5);
    }
}
