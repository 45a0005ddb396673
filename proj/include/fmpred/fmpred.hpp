#pragma once

#include "fmpred/classify.hpp"
#include "fmpred/clustering.hpp"
#include "fmpred/errors.hpp"
#include "fmpred/eval.hpp"
#include "fmpred/fpca.hpp"
#include "fmpred/grid.hpp"
#include "fmpred/logit.hpp"
#include "fmpred/mixture.hpp"
#include "fmpred/numerics.hpp"
#include "fmpred/parallel.hpp"
#include "fmpred/predict.hpp"
#include "fmpred/random.hpp"
#include "fmpred/simulate.hpp"
#include "fmpred/io.hpp"
