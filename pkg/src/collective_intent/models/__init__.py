"""Hand-written numpy models: graph convolution, GRU and the temporal intent predictors."""
