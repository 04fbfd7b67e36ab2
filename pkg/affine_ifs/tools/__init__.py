"""
Tools package for the affine IFS library.
Contains pure numerical helpers with no interpretation logic.
"""
