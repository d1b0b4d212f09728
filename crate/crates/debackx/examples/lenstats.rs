fn main() {
    let corpus = debackx::textcorpus::embedded_corpus();
    let mut lens: Vec<usize> = corpus.iter().flat_map(|p| [p.src_text.chars().count(), p.tgt_text.chars().count()]).collect();
    lens.sort();
    println!("min={} max={} median={}", lens[0], lens[lens.len()-1], lens[lens.len()/2]);
    for cap in [15, 23, 31, 39, 47, 63] {
        let n = corpus.iter().filter(|p| p.src_text.chars().count() <= cap && p.tgt_text.chars().count() <= cap).count();
        println!("pairs with both sides <= {cap}: {n}");
    }
}
