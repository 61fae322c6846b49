//! Forward kinematics on the upper-body skeleton, the 6D rotation encoding
//! and geodesic distance.
//!
//!     cargo run --release --example kinematics

use std::f64::consts::FRAC_PI_2;

use gesturelab::kinematics::{forward_kinematics, geodesic_distance, rot6d_to_matrix, Rotation, Skeleton};
use ndgrad::Array;

fn main() -> gesturelab::Result<()> {
    let sk = Skeleton::upper_body();
    let j = sk.joint_count();
    let names: Vec<&str> = sk.joints().iter().map(|x| x.name.as_str()).collect();

    // Rest pose, then the left upper arm raised 90 degrees about z.
    let raise = Rotation::from_axis_angle([0.0, 0.0, 1.0], FRAC_PI_2);
    let l_upper = names.iter().position(|n| *n == "l_upper_arm").expect("joint exists");
    let mut frames = Vec::with_capacity(2 * j * 6);
    for pose in 0..2 {
        for jj in 0..j {
            let r = if pose == 1 && jj == l_upper { raise } else { Rotation::from_axis_angle([1.0, 0.0, 0.0], 0.0) };
            frames.extend_from_slice(&r.to_rot6d());
        }
    }
    let pos = forward_kinematics(&sk, &Array::new(vec![2, j, 6], frames)?)?;
    for (jj, name) in names.iter().enumerate() {
        let at = |t: usize| [0, 1, 2].map(|c| pos.get(&[t, jj, c]));
        let (a, b) = (at(0), at(1));
        println!("  {name:<12} rest {a:>6.3?}  raised {b:>6.3?}");
    }

    // Any non-degenerate 6D vector decodes to a rotation.
    let messy = [2.0, 0.1, -0.3, 0.5, 1.5, 0.2];
    let r = rot6d_to_matrix(&messy)?;
    println!("decoded {messy:?}: det {:.12}, valid {}", r.determinant(), r.is_valid(1e-9));
    println!("geodesic(rest, raised) = {:.6} rad", geodesic_distance(&Rotation::from_axis_angle([0.0, 0.0, 1.0], 0.0), &raise));
    Ok(())
}
