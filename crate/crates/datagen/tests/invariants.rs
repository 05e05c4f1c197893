use cxa_datagen::generate::{episode_seed, generate_split, Split};
use cxa_datagen::keypoints::NeighborMode;
use cxa_datagen::sample::Channels;
use cxa_datagen::scene::SceneMode;
use cxa_datagen::world::{simulate_episode, WorldConfig};

#[test]
fn thousand_episodes_stay_finite_and_apart() {
    let cfg = WorldConfig::default();
    let mut worst = f64::INFINITY;
    for i in 0..1000 {
        let ep = simulate_episode(&cfg, episode_seed(99, Split::Train, i)).unwrap();
        for f in &ep.frames {
            assert!(f.ego.position.iter().chain(&f.ego_measured.position).all(|v| v.is_finite()));
            let mut discs: Vec<([f64; 2], f64)> = vec![([f.ego.position[0], f.ego.position[1]], 0.3)];
            for n in &f.neighbors {
                assert!(n.position.iter().chain(&n.velocity).all(|v| v.is_finite()));
                discs.push((n.position, n.radius));
            }
            for a in 0..discs.len() {
                for b in 0..a {
                    let d = (discs[a].0[0] - discs[b].0[0]).hypot(discs[a].0[1] - discs[b].0[1]);
                    worst = worst.min(d / (discs[a].1 + discs[b].1));
                }
            }
        }
    }
    assert!(worst >= 0.9, "closest approach {worst:.3} of the radius sum");
}

#[test]
fn generated_samples_satisfy_the_record_invariants() {
    let (manifest, samples) = generate_split(&WorldConfig::default(), &Channels::default(), 12, Split::Test, 600).unwrap();
    assert_eq!(manifest.count, 600);
    for s in &samples {
        assert_eq!(s.t_obs() + s.t_pred(), 10);
        for t in 0..s.t_obs() {
            let q = s.past_pose(t).orientation;
            assert!((q.norm() - 1.0).abs() <= 1e-9 && (q.w > 0.0 || (q.w == 0.0 && q.z >= 0.0)));
        }
        for t in 0..s.t_pred() {
            let q = s.future_pose(t).orientation;
            assert!((q.norm() - 1.0).abs() <= 1e-9 && q.w >= 0.0);
        }
        let pose = &s.neighbors[&NeighborMode::Pose];
        for row in pose.chunks(260) {
            let occupied = row.chunks(52).filter(|slot| slot.iter().any(|&v| v != 0.0)).count();
            assert!(occupied <= 5);
            for kp in row.chunks(2) {
                if kp != [0.0, 0.0] {
                    assert!((0.0..=480.0).contains(&kp[0]) && (0.0..=270.0).contains(&kp[1]));
                }
            }
        }
        for mode in SceneMode::ALL {
            let v = &s.scene[&mode];
            assert_eq!(v.len(), 3 * 648);
            assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }
}
