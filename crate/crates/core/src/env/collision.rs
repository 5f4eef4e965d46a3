use super::VehicleState;

/// Closed axis-aligned box overlap: boxes that exactly touch collide.
pub fn boxes_overlap(a: &VehicleState, b: &VehicleState) -> bool {
    let dx = (a.x - b.x).abs();
    let dy = (a.y - b.y).abs();
    dx <= 0.5 * (a.length + b.length) && dy <= 0.5 * (a.width + b.width)
}

/// Per-vehicle flag: does this vehicle overlap any other vehicle?
pub fn collision_check(vehicles: &[VehicleState]) -> Vec<bool> {
    let mut hit = vec![false; vehicles.len()];
    for i in 0..vehicles.len() {
        for j in (i + 1)..vehicles.len() {
            if boxes_overlap(&vehicles[i], &vehicles[j]) {
                hit[i] = true;
                hit[j] = true;
            }
        }
    }
    hit
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn at(x: f64, y: f64) -> VehicleState {
        VehicleState::new(x, y, 20.0, 0)
    }

    #[test]
    fn far_apart() {
        assert_eq!(collision_check(&[at(0.0, 0.0), at(100.0, 0.0)]), vec![false, false]);
    }

    #[test]
    fn full_overlap() {
        assert_eq!(collision_check(&[at(3.0, 4.0), at(3.0, 4.0)]), vec![true, true]);
    }

    #[test]
    fn touching_bumpers_collide() {
        assert_eq!(collision_check(&[at(0.0, 0.0), at(5.0, 0.0)]), vec![true, true]);
        assert_eq!(collision_check(&[at(0.0, 0.0), at(5.0 + 1e-9, 0.0)]), vec![false, false]);
    }

    #[test]
    fn adjacent_lanes_do_not_collide() {
        assert_eq!(collision_check(&[at(0.0, 0.0), at(0.0, 4.0)]), vec![false, false]);
    }

    #[test]
    fn only_involved_vehicles_flagged() {
        let flags = collision_check(&[at(0.0, 0.0), at(2.0, 0.5), at(50.0, 0.0)]);
        assert_eq!(flags, vec![true, true, false]);
    }

    proptest! {
        #[test]
        fn overlap_is_symmetric(ax in -50.0f64..50.0, ay in -5.0f64..5.0, bx in -50.0f64..50.0, by in -5.0f64..5.0) {
            let a = at(ax, ay);
            let b = at(bx, by);
            prop_assert_eq!(boxes_overlap(&a, &b), boxes_overlap(&b, &a));
            let f = collision_check(&[a.clone(), b.clone()]);
            let g = collision_check(&[b, a]);
            prop_assert_eq!(f[0], g[1]);
            prop_assert_eq!(f[1], g[0]);
        }
    }
}
