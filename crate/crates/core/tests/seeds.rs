use mutforge::seeds::{self, LexicalTokenizer, SeedOrigin, Tokenizer};
use mutforge::{ProgramText, SeedProgram};
use proptest::prelude::*;

fn seed(text: &str) -> SeedProgram {
    SeedProgram::from_text(ProgramText::new(text), SeedOrigin::Testsuite)
}

#[test]
fn golden_small_function() {
    let out = seeds::enhance(&[seed("fn f(a,b){a+b}")], 4, &LexicalTokenizer::rust(), 1).unwrap();
    let texts: Vec<&str> = out.iter().map(|s| s.text.text.as_str()).collect();
    assert_eq!(texts, ["fn f(a,b){a+b}", "fn b(f,a){a+b}", "fn a(f,a){f+f}", "fn b(f,a){a+f}"]);
    let ids: Vec<&str> = out.iter().map(|s| s.seed_id.as_str()).collect();
    assert_eq!(
        ids,
        ["s-501d5515ec956217", "s-501d5515ec956217-e1", "s-501d5515ec956217-e2", "s-501d5515ec956217-e3"]
    );
    assert!(out[1..].iter().all(|s| s.origin == SeedOrigin::Enhanced && s.parent_id.as_deref() == Some(ids[0])));
}

#[test]
fn too_small_target_is_rejected() {
    let two = [seed("a"), seed("b")];
    assert!(seeds::enhance(&two, 1, &LexicalTokenizer::generic(), 0).is_err());
}

proptest! {
    #[test]
    fn tokens_partition_any_text(text in "(\\PC|\n){0,80}") {
        for tok in [LexicalTokenizer::rust(), LexicalTokenizer::cpp(), LexicalTokenizer::generic()] {
            let tokens = tok.tokenize(&text);
            let joined: String = tokens.iter().map(|t| t.text(&text)).collect();
            prop_assert_eq!(&joined, &text);
            prop_assert!(tokens.windows(2).all(|w| w[0].end == w[1].start));
        }
    }

    #[test]
    fn originals_lead_and_lengths_hold(
        texts in proptest::collection::vec("[a-zA-Z_ (){};+*=0-9\n]{1,40}", 1..4),
        extra in 0usize..6,
        rng_seed in any::<u64>(),
    ) {
        let input: Vec<SeedProgram> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut s = seed(t);
                s.seed_id = format!("s{i}");
                s
            })
            .collect();
        let tok = LexicalTokenizer::rust();
        let out = seeds::enhance(&input, input.len() + extra, &tok, rng_seed).unwrap();
        prop_assert_eq!(out.len(), input.len() + extra);
        prop_assert_eq!(&out[..input.len()], &input[..]);
        for s in &out[input.len()..] {
            let parent = input.iter().find(|p| Some(&p.seed_id) == s.parent_id.as_ref()).unwrap();
            prop_assert_eq!(tok.tokenize(&s.text.text).len(), tok.tokenize(&parent.text.text).len());
        }
        prop_assert_eq!(seeds::enhance(&input, input.len() + extra, &tok, rng_seed).unwrap(), out);
    }
}
