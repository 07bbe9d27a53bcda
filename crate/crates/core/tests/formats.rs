use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use hava_core::container::{read_container, write_container, Entry, TensorContainer};
use hava_core::mesh::{
    build_adjacency, export_ply_colormap, icosahedron, icosphere, load_obj, load_region_mask, parse_obj,
    write_obj, write_region_mask, TemplateMesh,
};
use hava_core::pose::{read_pose_csv, write_pose_csv, PoseTrack};
use hava_core::{Error, RotationVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn entry_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<f32>)> {
    prop::collection::vec(1usize..5, 1..4).prop_flat_map(|dims| {
        let n: usize = dims.iter().product();
        (Just(dims), prop::collection::vec(-1e6f32..1e6, n))
    })
}

proptest! {
    #[test]
    fn container_round_trip(entries in prop::collection::vec(entry_strategy(), 1..6)) {
        let c = TensorContainer::from_entries(
            entries
                .into_iter()
                .enumerate()
                .map(|(i, (dims, vals))| {
                    Entry::f32(format!("entry_{i}"), dims, vals.into_iter().map(f64::from).collect()).unwrap()
                })
                .collect(),
        )
        .unwrap();
        let bytes = c.to_bytes().unwrap();
        let back = TensorContainer::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }
}

#[test]
fn container_file_round_trip_and_example_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.hava");
    let c = TensorContainer::from_entries(vec![Entry::f32("a", vec![2], vec![1.0, 2.0]).unwrap()]).unwrap();
    write_container(&c, &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    let mut expected = Vec::new();
    expected.extend_from_slice(b"HAVA");
    expected.extend_from_slice(&1u32.to_le_bytes());
    expected.extend_from_slice(&1u32.to_le_bytes());
    expected.extend_from_slice(&1u16.to_le_bytes());
    expected.push(b'a');
    expected.push(1);
    expected.extend_from_slice(&2u32.to_le_bytes());
    expected.push(0);
    expected.extend_from_slice(&1.0f32.to_le_bytes());
    expected.extend_from_slice(&2.0f32.to_le_bytes());
    assert_eq!(bytes.len(), 29);
    assert_eq!(bytes, expected);
    assert_eq!(read_container(&path).unwrap(), c);

    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"XAVA");
    fs::write(&path, &bad).unwrap();
    assert!(matches!(read_container(&path), Err(Error::BadMagic(_))));
}

#[test]
fn pose_csv_round_trip_300_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let track = PoseTrack::new(
        (0..300)
            .map(|_| RotationVector(std::array::from_fn(|_| rng.random_range(-0.5..0.5))))
            .collect(),
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("poses.csv");
    write_pose_csv(&track, &path).unwrap();
    let back = read_pose_csv(&path).unwrap();
    assert_eq!(back, track);
    assert!(fs::read_to_string(&path).unwrap().starts_with("frame,rx,ry,rz\n0,"));
}

#[test]
fn obj_suffixes_match_plain_reader() {
    let plain = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n";
    let suffixed = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\nf 1/1/1 2/2/1 3/3/1\n";
    let a = parse_obj(plain, Path::new("a.obj")).unwrap();
    let b = parse_obj(suffixed, Path::new("b.obj")).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.faces, vec![[0, 1, 2]]);
}

#[test]
fn obj_write_load_is_exact() {
    let mesh = icosphere(162, 100.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.obj");
    write_obj(&mesh, &path).unwrap();
    let back = build_adjacency(load_obj(&path).unwrap());
    assert_eq!(back, mesh);
}

#[test]
fn adjacency_is_symmetric_and_matches_edges() {
    for mesh in [icosahedron(), icosphere(42, 1.0), icosphere(642, 1.0)] {
        let mesh = build_adjacency(mesh);
        let mut edges = BTreeSet::new();
        for f in &mesh.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        for (v, nbrs) in mesh.adjacency.iter().enumerate() {
            for &u in nbrs {
                assert!(mesh.adjacency[u].contains(&v));
                assert!(edges.contains(&(u.min(v), u.max(v))));
            }
        }
        let total: usize = mesh.adjacency.iter().map(Vec::len).sum();
        assert_eq!(total, 2 * edges.len());
    }
    let ico = build_adjacency(icosahedron());
    assert!(ico.adjacency.iter().all(|a| a.len() == 5));
}

fn parse_ply_vertices(text: &str) -> Vec<(String, [u8; 3], String)> {
    let body = text.split("end_header\n").nth(1).unwrap();
    body.lines()
        .filter(|l| !l.starts_with("3 "))
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            assert_eq!(f.len(), 7);
            (
                f[..3].join(" "),
                [f[3].parse().unwrap(), f[4].parse().unwrap(), f[5].parse().unwrap()],
                f[6].to_string(),
            )
        })
        .collect()
}

#[test]
fn ply_colormap_round_trip() {
    let mesh = icosphere(42, 100.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let scalars: Vec<f64> = (0..mesh.num_vertices()).map(|_| rng.random_range(0.0..3.0)).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("err.ply");
    export_ply_colormap(&mesh, &scalars, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.contains(&format!("element vertex {}", mesh.num_vertices())));
    assert!(text.contains(&format!("element face {}", mesh.faces.len())));
    let rows = parse_ply_vertices(&text);
    assert_eq!(rows.len(), mesh.num_vertices());
    for (row, s) in rows.iter().zip(&scalars) {
        assert_eq!(row.2, format!("{s:.6}"));
        let parsed: f64 = row.2.parse().unwrap();
        assert!((parsed - s).abs() <= 5e-7);
    }

    let flat = TemplateMesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0]], vec![]).unwrap();
    export_ply_colormap(&flat, &[0.0, 1.0], &path).unwrap();
    let rows = parse_ply_vertices(&fs::read_to_string(&path).unwrap());
    assert_eq!(rows[0].1, [0, 0, 255]);
    assert_eq!(rows[1].1, [255, 0, 0]);
    export_ply_colormap(&flat, &[0.0, 0.0], &path).unwrap();
    let rows = parse_ply_vertices(&fs::read_to_string(&path).unwrap());
    assert!(rows.iter().all(|r| r.1 == [0, 0, 255] && r.2 == "0.000000"));
}

#[test]
fn mask_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lips.txt");

    fs::write(&path, "3\n5\n3\n").unwrap();
    let m = load_region_mask(&path, 10).unwrap();
    assert_eq!(m.indices(), &[3, 5]);
    assert_eq!(m.name, "lips");

    fs::write(&path, "12\n").unwrap();
    assert!(matches!(load_region_mask(&path, 10), Err(Error::OutOfRange { index: 12, .. })));

    let lines: String = (0..254).map(|i| format!("{}\n", 1000 + 7 * i)).collect();
    fs::write(&path, &lines).unwrap();
    assert_eq!(lines.lines().count(), 254);
    let m = load_region_mask(&path, 5023).unwrap();
    assert_eq!(m.len(), 254);

    let out = dir.path().join("copy.txt");
    write_region_mask(&m, &out).unwrap();
    assert_eq!(load_region_mask(&out, 5023).unwrap().indices(), m.indices());
}

proptest! {
    #[test]
    fn pose_csv_is_an_identity(v in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::ZERO, 3..60)) {
        let track = PoseTrack::new(v.chunks_exact(3).map(|c| RotationVector([c[0], c[1], c[2]])).collect());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_pose_csv(&track, &path).unwrap();
        prop_assert_eq!(read_pose_csv(&path).unwrap(), track);
    }
}
