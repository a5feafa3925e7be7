#pragma once

// Umbrella header for the graph multi-similarity learning toolkit.

#include "gmsl/dataio.hpp"
#include "gmsl/diffcore.hpp"
#include "gmsl/encoder.hpp"
#include "gmsl/errors.hpp"
#include "gmsl/evalkit.hpp"
#include "gmsl/fingerprint.hpp"
#include "gmsl/loss.hpp"
#include "gmsl/molgraph.hpp"
#include "gmsl/optim.hpp"
#include "gmsl/rng.hpp"
#include "gmsl/similarity.hpp"
#include "gmsl/trainer.hpp"
