// Interface every generated C++ mutator implements.
#pragma once
#include <memory>
#include <random>
#include "clang/ASTMatchers/ASTMatchFinder.h"
#include "clang/ASTMatchers/ASTMatchers.h"
#include "clang/Rewrite/Core/Rewriter.h"

class MutatorAction {
public:
  virtual ~MutatorAction() = default;
  virtual void registerMatchers(clang::ast_matchers::MatchFinder &Finder, clang::Rewriter &R,
                                std::mt19937 &Rng) = 0;
  virtual bool changed() const = 0;
};

std::unique_ptr<MutatorAction> makeMutator();

#define REGISTER_MUTATOR(T) \
  std::unique_ptr<MutatorAction> makeMutator() { return std::make_unique<T>(); }
