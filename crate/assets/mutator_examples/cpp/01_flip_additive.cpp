#include "MutatorHarness.h"

using namespace clang;
using namespace clang::ast_matchers;

class MutatorFrontendAction_flip_additive : public MutatorAction {
public:
  class Callback : public MatchFinder::MatchCallback {
  public:
    Callback(Rewriter &R, std::mt19937 &Rng) : Rewrite(R), Rng(Rng) {}
    void run(const MatchFinder::MatchResult &Result) override;
    void finish();
    bool Changed = false;

  private:
    Rewriter &Rewrite;
    std::mt19937 &Rng;
    std::vector<const BinaryOperator *> Sites;
  };

  void registerMatchers(MatchFinder &Finder, Rewriter &R, std::mt19937 &Rng) override {
    CB = std::make_unique<Callback>(R, Rng);
    Finder.addMatcher(binaryOperator(hasAnyOperatorName("+", "-"), isExpansionInMainFile()).bind("op"), CB.get());
  }

  bool changed() const override {
    CB->finish();
    return CB->Changed;
  }

private:
  std::unique_ptr<Callback> CB;
};

void MutatorFrontendAction_flip_additive::Callback::run(const MatchFinder::MatchResult &Result) {
  if (const auto *Op = Result.Nodes.getNodeAs<BinaryOperator>("op"))
    Sites.push_back(Op);
}

void MutatorFrontendAction_flip_additive::Callback::finish() {
  if (Changed || Sites.empty())
    return;
  const BinaryOperator *Op = Sites[Rng() % Sites.size()];
  Rewrite.ReplaceText(Op->getOperatorLoc(), 1, Op->getOpcode() == BO_Add ? "-" : "+");
  Changed = true;
}

REGISTER_MUTATOR(MutatorFrontendAction_flip_additive)
