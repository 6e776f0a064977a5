#![allow(dead_code)]
pub mod reference;

use std::sync::OnceLock;

use featdesc::corpus::{self, Sequence};
use featdesc::fixture::ToyFixture;

pub fn toy() -> &'static ToyFixture {
    static TOY: OnceLock<ToyFixture> = OnceLock::new();
    TOY.get_or_init(|| ToyFixture::build().expect("toy fixture builds"))
}

pub fn toy_sequences() -> Vec<Sequence> {
    let t = toy();
    corpus::tokenize(&t.corpus, &t.tokenizer, 128).unwrap()
}
