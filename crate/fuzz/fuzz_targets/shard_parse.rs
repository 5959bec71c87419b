#![no_main]

use libfuzzer_sys::fuzz_target;
use slidemil::store::ShardFile;

fuzz_target!(|data: &[u8]| {
    let Ok(shard) = ShardFile::parse(data) else { return };
    let dim = shard.feature_dim();
    let slides: Vec<(String, String)> = shard
        .cases()
        .flat_map(|(case, slides)| slides.map(move |s| (case.to_string(), s.to_string())))
        .collect();
    for (case, slide) in slides {
        assert!(shard.location(&case, &slide).is_some());
        if let Ok(features) = shard.read_slide(&case, &slide) {
            assert_eq!(features.ncols(), dim);
        }
    }
});
