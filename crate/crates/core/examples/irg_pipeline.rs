//! Iterative relation generation on one subject/object pair.

use debias_sgg::dataio::Vocabulary;
use debias_sgg::irg::{composite_features, decompose_composite, irg_rounds, IrgDims, RelationHeadParams, CATEGORY_NAMES};
use debias_sgg::numeric::RngStream;
use debias_sgg::BBox;

fn main() -> debias_sgg::Result<()> {
    let vocab = Vocabulary::action_genome();
    let dims = IrgDims {
        visual: 16,
        visual_proj: 8,
        union: 8,
        semantic: 8,
        predicate: 8,
        categories: vocab.category_sizes(),
    };
    let params = RelationHeadParams::seeded(dims, vocab.predicates(), vocab.objects(), [640.0, 480.0], 17)?;
    let mut rng = RngStream::new(2);
    let mut visual = || (0..dims.visual).map(|_| rng.standard_normal()).collect::<Vec<f64>>();
    let person = vocab.object_id("person").expect("built-in class");
    let table = vocab.object_id("table").expect("built-in class");
    let subj = params.entity(0, person, BBox::new(120.0, 40.0, 330.0, 460.0), visual())?;
    let obj = params.entity(1, table, BBox::new(260.0, 280.0, 600.0, 470.0), visual())?;

    let p = composite_features(&subj, &obj, &params)?;
    let (s, o) = decompose_composite(&p)?;
    println!("composite width {} (offsets {:?}); views {} + {}", p.width(), p.offsets, s.len(), o.len());

    for (round, dists) in irg_rounds(&subj, &obj, &params, 3)?.iter().enumerate() {
        let top = dists.argmax();
        let labels: Vec<String> = (0..3)
            .map(|k| {
                let id = dims.category_offset(k) + top[k];
                format!("{}={} ({:.3})", CATEGORY_NAMES[k], vocab.predicates()[id], dists.categories[k].probs()[top[k]])
            })
            .collect();
        println!("round {round}: {}", labels.join(", "));
    }
    Ok(())
}
