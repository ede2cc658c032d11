use derivpq::vecio::{encode_vecs, parse_vecs, read_vecs, write_vecs};
use derivpq::{Dataset, ElementKind, Error};
use proptest::prelude::*;

fn dataset(kind: ElementKind) -> impl Strategy<Value = Dataset> {
    (1usize..6, 0usize..8).prop_flat_map(move |(dim, count)| {
        let value = match kind {
            ElementKind::Float32 => any::<f32>()
                .prop_filter("finite", |v| v.is_finite())
                .boxed(),
            ElementKind::Uint8 => (0u8..=255).prop_map(f32::from).boxed(),
            ElementKind::Int32 => (-1_000_000i32..1_000_000).prop_map(|v| v as f32).boxed(),
        };
        prop::collection::vec(value, dim * count)
            .prop_map(move |data| Dataset::new(dim, data).unwrap())
    })
}

fn round_trip(ds: &Dataset, kind: ElementKind) {
    let bytes = encode_vecs(ds, kind).unwrap();
    let back = parse_vecs(&bytes, kind).unwrap();
    if ds.is_empty() {
        assert!(bytes.is_empty());
        assert!(back.is_empty());
    } else {
        assert_eq!(&back, ds);
        assert_eq!(bytes.len(), ds.count() * (4 + ds.dim() * kind.size()));
        // Writing what was read reproduces the bytes.
        assert_eq!(encode_vecs(&back, kind).unwrap(), bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fvecs_round_trip(ds in dataset(ElementKind::Float32)) {
        round_trip(&ds, ElementKind::Float32);
    }

    #[test]
    fn bvecs_round_trip(ds in dataset(ElementKind::Uint8)) {
        round_trip(&ds, ElementKind::Uint8);
    }

    #[test]
    fn ivecs_round_trip(ds in dataset(ElementKind::Int32)) {
        round_trip(&ds, ElementKind::Int32);
    }

    /// Any length that is not a whole number of records is rejected.
    #[test]
    fn partial_records_rejected(dim in 1usize..5, count in 1usize..5, cut in 1usize..20) {
        let ds = Dataset::new(dim, vec![1.0; dim * count]).unwrap();
        let bytes = encode_vecs(&ds, ElementKind::Float32).unwrap();
        let cut = cut.min(bytes.len() - 1);
        let short = &bytes[..bytes.len() - cut];
        let is_whole = short.len().is_multiple_of(4 + 4 * dim);
        prop_assert_eq!(parse_vecs(short, ElementKind::Float32).is_ok(), is_whole);
    }
}

#[test]
fn single_float_record() {
    let bytes = [1u8, 0, 0, 0, 0, 0, 0x40, 0x40];
    let ds = parse_vecs(&bytes, ElementKind::Float32).unwrap();
    assert_eq!((ds.dim(), ds.count(), ds.data()), (1, 1, &[3.0f32][..]));
}

#[test]
fn mixed_dimensions_reported_at_second_record() {
    let a = encode_vecs(
        &Dataset::new(4, vec![0.0; 4]).unwrap(),
        ElementKind::Float32,
    )
    .unwrap();
    let b = encode_vecs(
        &Dataset::new(5, vec![0.0; 5]).unwrap(),
        ElementKind::Float32,
    )
    .unwrap();
    let bytes = [a.clone(), b].concat();
    match parse_vecs(&bytes, ElementKind::Float32) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, a.len() as u64),
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn non_positive_dimension_rejected() {
    let bytes = [0u8, 0, 0, 0];
    assert!(matches!(
        parse_vecs(&bytes, ElementKind::Uint8),
        Err(Error::Format { .. })
    ));
    let bytes = (-3i32).to_le_bytes();
    assert!(matches!(
        parse_vecs(&bytes, ElementKind::Uint8),
        Err(Error::Format { .. })
    ));
}

#[test]
fn uint8_out_of_range_is_a_domain_error() {
    let ds = Dataset::new(1, vec![256.0]).unwrap();
    assert!(matches!(
        encode_vecs(&ds, ElementKind::Uint8),
        Err(Error::Domain(_))
    ));
    let ds = Dataset::new(1, vec![1.5]).unwrap();
    assert!(matches!(
        encode_vecs(&ds, ElementKind::Uint8),
        Err(Error::Domain(_))
    ));
}

#[test]
fn files_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let ds = Dataset::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
    let path = dir.path().join("a.fvecs");
    write_vecs(&ds, &path, ElementKind::Float32).unwrap();
    assert_eq!(read_vecs(&path, ElementKind::Float32).unwrap(), ds);

    let empty = dir.path().join("e.fvecs");
    write_vecs(&Dataset::empty(), &empty, ElementKind::Float32).unwrap();
    assert_eq!(std::fs::metadata(&empty).unwrap().len(), 0);
    assert_eq!(read_vecs(&empty, ElementKind::Float32).unwrap().count(), 0);

    assert!(matches!(
        read_vecs(dir.path().join("missing.fvecs"), ElementKind::Float32),
        Err(Error::Io(_))
    ));
}
