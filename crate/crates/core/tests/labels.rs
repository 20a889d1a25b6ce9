use std::collections::HashSet;

use proptest::prelude::*;
use semtrans::labels::*;

fn kitti_by_name(name: &str) -> u8 {
    let row = semantickitti_rows().iter().find(|r| r.name == name).unwrap();
    map_semantickitti(row.source_id).unwrap()
}

fn cityscapes_by_name(name: &str) -> u8 {
    let row = cityscapes_rows().iter().find(|r| r.name == name).unwrap();
    map_cityscapes(row.source_id).unwrap()
}

#[test]
fn table_merges() {
    assert_eq!(kitti_by_name("bicyclist"), ids::PERSON);
    assert_eq!(kitti_by_name("motorcyclist"), ids::PERSON);
    assert_eq!(kitti_by_name("parking"), ids::SIDEWALK);
    assert_eq!(kitti_by_name("other-ground"), UNLABELED);
    assert_eq!(kitti_by_name("trunk"), ids::VEGETATION);
    assert_eq!(kitti_by_name("car"), ids::CAR);
}

#[test]
fn unmerged_rows_keep_their_name() {
    let merged = ["bicyclist", "motorcyclist", "parking", "other-ground", "trunk"];
    for r in semantickitti_rows().iter().filter(|r| !merged.contains(&r.name.as_str())) {
        let shared = map_semantickitti(r.source_id).unwrap();
        assert_eq!(CLASS_NAMES[usize::from(shared)].to_lowercase(), r.name, "{r:?}");
    }
}

#[test]
fn cityscapes_is_the_identity() {
    assert_eq!(cityscapes_by_name("person"), ids::PERSON);
    assert_eq!(cityscapes_by_name("unlabeled"), UNLABELED);
    assert_eq!(cityscapes_by_name("road"), ids::ROAD);
    for id in 0..NUM_IDS as u32 {
        assert_eq!(u32::from(map_cityscapes(id).unwrap()), id);
    }
    assert!(matches!(map_cityscapes(15), Err(semtrans::error::Error::UnmappedLabel(15))));
}

#[test]
fn mappings_are_total_and_surjective() {
    let hit: HashSet<u8> = (0..20).map(|i| map_semantickitti(i).unwrap()).collect();
    assert_eq!(hit, (0..NUM_IDS as u8).collect());
    let hit: HashSet<u8> = (0..15).map(|i| map_cityscapes(i).unwrap()).collect();
    assert_eq!(hit.len(), NUM_IDS);
}

#[test]
fn mapping_files_parse_and_reject_garbage() {
    let rows = parse_mapping("# c\n3 road 7 # trailing\n\n", "t").unwrap();
    assert_eq!(rows, vec![MappingRow { source_id: 3, name: "road".into(), target: 7 }]);
    assert!(parse_mapping("3 road", "t").is_err());
    assert!(parse_mapping("x road 7", "t").is_err());
}

#[test]
fn one_hot_channel_sums_count_pixels() {
    let m = SegmentMap::new(2, 2, vec![ids::CAR, ids::ROAD, ids::ROAD, UNLABELED]).unwrap();
    let v = one_hot(&m, false);
    assert_eq!(v.len(), 14 * 4);
    let sums: Vec<f32> = v.chunks(4).map(|c| c.iter().sum()).collect();
    let mut want = vec![0.0; 14];
    want[0] = 1.0;
    want[6] = 2.0;
    assert_eq!(sums, want);
    assert_eq!(one_hot(&m, true).chunks(4).map(|c| c.iter().sum::<f32>()).next(), Some(1.0));
}

#[test]
fn colorize_unlabeled_and_counts() {
    let img = colorize(&SegmentMap::filled(3, 2, UNLABELED).unwrap());
    assert!(img.pixels().all(|p| p.0 == PALETTE[0]));
    let m = SegmentMap::new(3, 1, vec![ids::POLE, ids::POLE, ids::FENCE]).unwrap();
    let img = colorize(&m);
    assert_eq!(img.pixels().filter(|p| p.0 == PALETTE[13]).count(), 2);
    assert_eq!(img.pixels().filter(|p| p.0 == PALETTE[10]).count(), 1);
}

#[test]
fn argmax_breaks_ties_towards_the_first_channel() {
    let classes = ClassList::new(&[ids::ROAD, ids::CAR]).unwrap();
    let m = classes.argmax(&[0.5, 0.1, 0.5, 0.9], 2, 1).unwrap();
    assert_eq!(m.ids(), &[ids::ROAD, ids::CAR]);
    assert!(classes.argmax(&[0.0; 3], 2, 1).is_err());
    assert!(ClassList::new(&[1, 1]).is_err());
    assert!(ClassList::new(&[]).is_err());
}

fn map() -> impl Strategy<Value = SegmentMap> {
    (1usize..9, 1usize..9).prop_flat_map(|(w, h)| {
        prop::collection::vec(0u8..NUM_IDS as u8, w * h).prop_map(move |ids| SegmentMap::new(w, h, ids).unwrap())
    })
}

proptest! {
    #[test]
    fn one_hot_then_argmax_is_identity(m in map()) {
        let classes = ClassList::all_with_unlabeled();
        let back = classes.argmax(&one_hot(&m, true), m.width(), m.height()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn colorize_round_trips(m in map()) {
        prop_assert_eq!(decolorize(&colorize(&m)).unwrap(), m);
    }

    #[test]
    fn colour_histogram_matches_id_histogram(m in map()) {
        let img = colorize(&m);
        let hist = m.histogram();
        for (id, &n) in hist.iter().enumerate() {
            prop_assert_eq!(img.pixels().filter(|p| p.0 == PALETTE[id]).count(), n);
        }
    }

    #[test]
    fn mirroring_twice_is_identity(m in map()) {
        prop_assert_eq!(m.mirror_columns().mirror_columns(), m);
    }
}
