#pragma once

#include "glevy/core.hpp"
#include "glevy/rng.hpp"
#include "glevy/uncertainty.hpp"
#include "glevy/scenario.hpp"
#include "glevy/functional.hpp"
#include "glevy/pide.hpp"
#include "glevy/sublinear.hpp"
#include "glevy/stochint.hpp"
#include "glevy/jumpdiff.hpp"
