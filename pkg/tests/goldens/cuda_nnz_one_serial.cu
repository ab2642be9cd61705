__device__ __forceinline__ int binary_search_before(const int *array, int lo, int hi, int target) {
  if (array[lo] > target) {
    return lo;
  }
  while (hi - lo > 1) {
    int mid = (lo + hi) / 2;
    if (array[mid] <= target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

template <typename T, int G>
__device__ void atomicAddGroup(T *array, int index, T value);

template <typename T, int G>
__device__ void segReduceGroup(T *array, int index, T value);

// point: nnz:1,col:1,r:1
// grid_size = 4
// block_size = 256
__global__ void spmm_nnz_one(const int *A2_pos, const int *A2_crd, const double *A_vals, const double *B_vals, double *C_vals, const int *i_blockStarts, int A1_dimension, int B2_dimension, int C2_dimension) {
  int block = blockIdx.x;
  int warp = threadIdx.x / 64;
  int fpos1 = threadIdx.x % 64;
  for (int ki = 0; ki < 1; ki++) {
    int k = warp * 1 + ki;
    int pA2_begin = i_blockStarts[block];
    int pA2_end = i_blockStarts[block + 1];
    int fposA = block * 64 + fpos1;
    int i_pos = binary_search_before(A2_pos, pA2_begin, min(pA2_end + 1, A1_dimension), fposA);
    int i = i_pos;
    double tmp = 0.0;
    if (fposA >= A2_pos[A1_dimension]) {
      break;
    }
    int f = A2_crd[fposA];
    int kB = f * B2_dimension + k;
    while (fposA == A2_pos[i_pos + 1]) {
      i_pos = i_pos + 1;
      i = i_pos;
    }
    tmp = A_vals[fposA] * B_vals[kB];
    int kC = i * C2_dimension + k;
    atomicAdd(&C_vals[kC], tmp);
  }
}
