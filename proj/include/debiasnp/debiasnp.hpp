#pragma once

// Umbrella header for the debiased nonparametric regression library.

#include "debiasnp/dataset.hpp"
#include "debiasnp/debias.hpp"
#include "debiasnp/first_stage.hpp"
#include "debiasnp/inference.hpp"
#include "debiasnp/local_poly.hpp"
#include "debiasnp/report.hpp"
#include "debiasnp/rng.hpp"
#include "debiasnp/simulation.hpp"
#include "debiasnp/version.hpp"
