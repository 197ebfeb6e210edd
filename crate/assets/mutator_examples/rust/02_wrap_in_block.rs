use rand::RngCore;
use syn::visit_mut::{self, VisitMut};

use crate::mutator::Mutator;

pub struct Mutator_;

/// Counts `let` initializers, then wraps the chosen one in a block.
struct Wrap {
    target: Option<usize>,
    seen: usize,
    done: bool,
}

impl VisitMut for Wrap {
    fn visit_local_mut(&mut self, local: &mut syn::Local) {
        if let Some(init) = &mut local.init {
            if self.target == Some(self.seen) {
                let expr = &init.expr;
                init.expr = Box::new(syn::parse_quote!({ #expr }));
                self.done = true;
            }
            self.seen += 1;
        }
        visit_mut::visit_local_mut(self, local);
    }
}

impl Mutator for Mutator_ {
    fn name(&self) -> &str {
        "wrap-initializer-in-block"
    }

    fn mutate(&self, file: &mut syn::File, rng: &mut dyn RngCore) -> bool {
        let mut count = Wrap { target: None, seen: 0, done: false };
        count.visit_file_mut(file);
        if count.seen == 0 {
            return false;
        }
        let pick = (rng.next_u64() % count.seen as u64) as usize;
        let mut wrap = Wrap { target: Some(pick), seen: 0, done: false };
        wrap.visit_file_mut(file);
        wrap.done
    }

    fn chain_of_thought(&self) -> &str {
        "A block whose tail is the original expression has the same type and value."
    }
}
