use rand::RngCore;

pub trait Mutator {
    fn name(&self) -> &str;
    fn mutate(&self, file: &mut syn::File, rng: &mut dyn RngCore) -> bool;
    fn chain_of_thought(&self) -> &str;
}
