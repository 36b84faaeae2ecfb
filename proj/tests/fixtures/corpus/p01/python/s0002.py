n=int(input())
print(n*2) # v2
