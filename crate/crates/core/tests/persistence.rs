use derivpq::synth::{anisotropic, Mixture};
use derivpq::vecio::{load_model, save_model, Persist};
use derivpq::{
    AnnBackend, Error, FlatIndex, InvertedIndex, IvfParams, PqParams, ProductQuantizer, QueryParams,
};

#[test]
fn quantizer_round_trip_preserves_codes() {
    let data = Mixture::new(8, 10, 3.0, 1).sample(1000, 2);
    let pq = ProductQuantizer::train(&data, &PqParams::new(2, 5, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pq.dpq");
    save_model(&pq, &path).unwrap();
    let back: ProductQuantizer = load_model(&path).unwrap();
    assert_eq!(back, pq);
    for x in data.rows().take(200) {
        assert_eq!(back.encode(x).unwrap(), pq.encode(x).unwrap());
    }
}

#[test]
fn rotated_quantizer_round_trip() {
    let data = anisotropic(1500, 8, 0.05, 3);
    let pq = ProductQuantizer::train_opq(&data, &PqParams::new(2, 4, 2), 3).unwrap();
    assert!(pq.rotation().is_some());
    let back = ProductQuantizer::from_bytes(&pq.to_bytes()).unwrap();
    assert_eq!(back, pq);
}

#[test]
fn flat_and_inverted_round_trip() {
    let data = Mixture::new(8, 10, 3.0, 4).sample(2000, 5);
    let pq = ProductQuantizer::train(&data, &PqParams::new(4, 6, 3)).unwrap();
    let flat = FlatIndex::build(pq, &data).unwrap();
    let back = FlatIndex::from_bytes(&flat.to_bytes()).unwrap();
    assert_eq!(back, flat);

    let ivf =
        InvertedIndex::build(&data, &data, &IvfParams::new(8, PqParams::new(2, 4, 2))).unwrap();
    let back = InvertedIndex::from_bytes(&ivf.to_bytes()).unwrap();
    assert_eq!(back, ivf);
    let q = Mixture::new(8, 10, 3.0, 4).sample(20, 6);
    for y in q.rows() {
        assert_eq!(back.assign(y), ivf.assign(y));
        let p = QueryParams::derived(5, 50).with_ma(3);
        assert_eq!(
            back.search(y, &p).unwrap().ids(),
            ivf.search(y, &p).unwrap().ids()
        );
    }
}

#[test]
fn damaged_files_are_format_errors() {
    let data = Mixture::new(4, 4, 3.0, 1).sample(200, 2);
    let pq = ProductQuantizer::train(&data, &PqParams::new(2, 3, 1)).unwrap();
    let bytes = pq.to_bytes();

    let mut wrong_magic = bytes.clone();
    wrong_magic[0] = b'X';
    assert!(matches!(
        ProductQuantizer::from_bytes(&wrong_magic),
        Err(Error::Format { offset: 0, .. })
    ));

    // A quantizer file is not an index file.
    assert!(matches!(
        FlatIndex::from_bytes(&bytes),
        Err(Error::Format { offset: 0, .. })
    ));

    for cut in [1, 4, bytes.len() / 2] {
        let short = &bytes[..bytes.len() - cut];
        assert!(matches!(
            ProductQuantizer::from_bytes(short),
            Err(Error::Format { .. })
        ));
    }

    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(
        ProductQuantizer::from_bytes(&long),
        Err(Error::Format { .. })
    ));
}

#[test]
fn reordered_centroids_fail_the_group_check() {
    let data = Mixture::new(4, 4, 3.0, 1).sample(400, 2);
    let pq = ProductQuantizer::train(&data, &PqParams::new(1, 3, 1)).unwrap();
    let mut bytes = pq.to_bytes();
    // Header (12) + dim, m, bits, derived_bits (16) + rotation flag (1),
    // then centroid 0 of subspace 0. Swapping centroids 0 and 1 moves
    // each into the other's group.
    let dsub = pq.dsub();
    let start = 12 + 16 + 1;
    let width = 4 * dsub;
    let (a, b) = bytes[start..start + 2 * width].split_at_mut(width);
    a.swap_with_slice(b);
    assert!(matches!(
        ProductQuantizer::from_bytes(&bytes),
        Err(Error::Format { .. })
    ));
}
