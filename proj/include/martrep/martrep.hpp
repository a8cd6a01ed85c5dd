#pragma once

// Umbrella header: exact stochastic calculus on scenario trees, martingale
// representation, equivalent-measure analysis, PSD diagonalization of
// covariation cells, sigma-martingale probes, and claim hedging.

#include "martrep/calculus.hpp"
#include "martrep/diagonalization.hpp"
#include "martrep/emm.hpp"
#include "martrep/error.hpp"
#include "martrep/linalg.hpp"
#include "martrep/prng.hpp"
#include "martrep/rational.hpp"
#include "martrep/reports.hpp"
#include "martrep/representation.hpp"
#include "martrep/sft.hpp"
#include "martrep/sigma.hpp"
#include "martrep/tree.hpp"
