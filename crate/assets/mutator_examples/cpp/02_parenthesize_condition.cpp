#include "MutatorHarness.h"

using namespace clang;
using namespace clang::ast_matchers;

class MutatorFrontendAction_paren_cond : public MutatorAction {
public:
  class Callback : public MatchFinder::MatchCallback {
  public:
    Callback(Rewriter &R, std::mt19937 &Rng) : Rewrite(R), Rng(Rng) {}
    void run(const MatchFinder::MatchResult &Result) override;
    bool Changed = false;

  private:
    Rewriter &Rewrite;
    std::mt19937 &Rng;
  };

  void registerMatchers(MatchFinder &Finder, Rewriter &R, std::mt19937 &Rng) override {
    CB = std::make_unique<Callback>(R, Rng);
    Finder.addMatcher(ifStmt(isExpansionInMainFile()).bind("if"), CB.get());
  }

  bool changed() const override { return CB && CB->Changed; }

private:
  std::unique_ptr<Callback> CB;
};

void MutatorFrontendAction_paren_cond::Callback::run(const MatchFinder::MatchResult &Result) {
  const auto *If = Result.Nodes.getNodeAs<IfStmt>("if");
  if (!If || Changed || (Rng() % 2))
    return;
  SourceRange R = If->getCond()->getSourceRange();
  Rewrite.InsertTextBefore(R.getBegin(), "(!!(");
  Rewrite.InsertTextAfterToken(R.getEnd(), "))");
  Changed = true;
}

REGISTER_MUTATOR(MutatorFrontendAction_paren_cond)
