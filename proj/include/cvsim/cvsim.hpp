#pragma once

// Everything in one include.

#include "cvsim/budget.hpp"
#include "cvsim/dsl.hpp"
#include "cvsim/error.hpp"
#include "cvsim/fock.hpp"
#include "cvsim/gaussian.hpp"
#include "cvsim/gkp.hpp"
#include "cvsim/loop.hpp"
#include "cvsim/tdm.hpp"
#include "cvsim/telegates.hpp"
