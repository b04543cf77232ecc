#pragma once

// Bézier-basis Gaussian process regression with the buttress parametrization:
// exponentially many Gaussian control points represented by chains of small
// per-dimension weight matrices, trained by matrix-inversion-free stochastic
// variational inference.

#include "bezgp/bernstein.hpp"
#include "bezgp/buttress.hpp"
#include "bezgp/data.hpp"
#include "bezgp/errors.hpp"
#include "bezgp/model.hpp"
#include "bezgp/reference.hpp"
#include "bezgp/rng.hpp"
#include "bezgp/trainer.hpp"
#include "bezgp/verify.hpp"
