#pragma once

#include "mergelock/analysis.hpp"
#include "mergelock/assignment.hpp"
#include "mergelock/attack.hpp"
#include "mergelock/checkpoint.hpp"
#include "mergelock/config.hpp"
#include "mergelock/container.hpp"
#include "mergelock/decompose.hpp"
#include "mergelock/errors.hpp"
#include "mergelock/key.hpp"
#include "mergelock/matrix.hpp"
#include "mergelock/merge.hpp"
#include "mergelock/parallel.hpp"
#include "mergelock/permutation.hpp"
#include "mergelock/protect.hpp"
#include "mergelock/rng.hpp"
#include "mergelock/synth.hpp"
#include "mergelock/transformer.hpp"
