//! Group-to-label tables, row by row, at zero tolerance.

use dsreg::corpus::{Group, TaggedExample};
use dsreg::mining::{map_classification, map_tagging, LTag, LabelTriple, SpanList, ZTag};

#[test]
fn classification_table() {
    let rows = [
        (Group::Pos, (1, 1, 1)),
        (Group::HardNeg, (0, 1, 2)),
        (Group::EasyNeg, (0, 0, 0)),
    ];
    for (group, (y, z, l)) in rows {
        assert_eq!(map_classification(Some(group)).unwrap(), LabelTriple { y, z, l });
    }
    assert!(map_classification(None).is_err());
}

fn ex(tokens: &str, tags: &str) -> TaggedExample {
    TaggedExample {
        id: "t".into(),
        tokens: tokens.split(' ').map(String::from).collect(),
        tags: tags.split(' ').map(String::from).collect(),
    }
}

#[test]
fn tagging_table() {
    // One positive span (tokens 1..3), one hard-negative span (tokens 4..6).
    let e = ex("a FSI ratio x total assets y", "O B-FSI I-FSI O O O O");
    let hard = SpanList::new(vec![(4, 6)], 7).unwrap();
    let t = map_tagging(&e, &hard).unwrap();

    let rows: [(usize, &str, ZTag, LTag); 7] = [
        (0, "O", ZTag::O, LTag::O),
        (1, "B-FSI", ZTag::B, LTag::BPos),
        (2, "I-FSI", ZTag::I, LTag::IPos),
        (3, "O", ZTag::O, LTag::O),
        (4, "O", ZTag::B, LTag::BHard),
        (5, "O", ZTag::I, LTag::IHard),
        (6, "O", ZTag::O, LTag::O),
    ];
    for (i, y, z, l) in rows {
        assert_eq!(t.y[i], y, "y at {i}");
        assert_eq!(t.z[i], z, "z at {i}");
        assert_eq!(t.l[i], l, "l at {i}");
    }
}

#[test]
fn tag_strings() {
    let z: Vec<&str> = ZTag::ALL.iter().map(|t| t.as_str()).collect();
    let l: Vec<&str> = LTag::ALL.iter().map(|t| t.as_str()).collect();
    assert_eq!(z, ["O", "B", "I"]);
    assert_eq!(l, ["O", "B-pos", "I-pos", "B-hard", "I-hard"]);
}
