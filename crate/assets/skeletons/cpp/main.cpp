// Mutator executable harness: program on stdin, mutated program on stdout.
// Exit 0 = mutated, 10 = no matching site, anything else = error.
#include <cstdlib>
#include <iostream>
#include <iterator>
#include <string>
#include "MutatorHarness.h"
#include "clang/Frontend/ASTUnit.h"
#include "clang/Tooling/Tooling.h"

int main() {
  std::string Src((std::istreambuf_iterator<char>(std::cin)), std::istreambuf_iterator<char>());
  const char *SeedEnv = std::getenv("MUT_SEED");
  unsigned Seed = SeedEnv ? static_cast<unsigned>(std::strtoul(SeedEnv, nullptr, 10)) : 0;
  auto AST = clang::tooling::buildASTFromCodeWithArgs(Src, {"-std=c++17", "-fsyntax-only"}, "input.cpp");
  if (!AST)
    return 2;
  clang::Rewriter R(AST->getSourceManager(), AST->getLangOpts());
  std::mt19937 Rng(Seed);
  auto M = makeMutator();
  clang::ast_matchers::MatchFinder Finder;
  M->registerMatchers(Finder, R, Rng);
  Finder.matchAST(AST->getASTContext());
  if (!M->changed())
    return 10;
  const auto *Buf = R.getRewriteBufferFor(AST->getSourceManager().getMainFileID());
  if (!Buf)
    return 10;
  std::cout << std::string(Buf->begin(), Buf->end());
  return 0;
}
