use rand::RngCore;
use syn::visit_mut::{self, VisitMut};

use crate::mutator::Mutator;

pub struct Mutator_;

/// First pass counts `+`/`-` sites; second pass flips the chosen one.
struct Flip {
    target: Option<usize>,
    seen: usize,
}

impl VisitMut for Flip {
    fn visit_expr_binary_mut(&mut self, node: &mut syn::ExprBinary) {
        let replacement: Option<syn::BinOp> = match node.op {
            syn::BinOp::Add(_) => Some(syn::parse_quote!(-)),
            syn::BinOp::Sub(_) => Some(syn::parse_quote!(+)),
            _ => None,
        };
        if let Some(op) = replacement {
            if self.target == Some(self.seen) {
                node.op = op;
            }
            self.seen += 1;
        }
        visit_mut::visit_expr_binary_mut(self, node);
    }
}

impl Mutator for Mutator_ {
    fn name(&self) -> &str {
        "flip-additive-operator"
    }

    fn mutate(&self, file: &mut syn::File, rng: &mut dyn RngCore) -> bool {
        let mut count = Flip { target: None, seen: 0 };
        count.visit_file_mut(file);
        if count.seen == 0 {
            return false;
        }
        let pick = (rng.next_u64() % count.seen as u64) as usize;
        Flip { target: Some(pick), seen: 0 }.visit_file_mut(file);
        true
    }

    fn chain_of_thought(&self) -> &str {
        "Swapping + and - keeps both operand types, so numeric code still type-checks."
    }
}
